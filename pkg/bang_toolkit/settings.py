"""
Django settings for bang_toolkit project.
"""

import os
import sys

# Force UTF-8 encoding
if sys.platform == 'win32':
    os.environ['PYTHONIOENCODING'] = 'utf-8'

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Sem superfície web; a chave só existe porque o Django exige.
SECRET_KEY = config('SECRET_KEY', default='django-insecure-bang-toolkit-local-only')

DEBUG = config('DEBUG', default=True, cast=bool)

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',

    # Third-party apps
    'rest_framework',

    # Local apps
    'masking',
    'modeling',
    'objectives',
    'decoding',
    'corpus',
    'bench',
    'runs',
]

# Database
# SQLite por padrão (desenvolvimento); PostgreSQL para o registro de execuções compartilhado
DB_ENGINE = config('DB_ENGINE', default='sqlite3')

if DB_ENGINE == 'postgresql':
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.postgresql',
            'NAME': config('DB_NAME', default='bang_db'),
            'USER': config('DB_USER', default='bang_user'),
            'PASSWORD': config('DB_PASSWORD', default='bang_user'),
            'HOST': config('DB_HOST', default='localhost'),
            'PORT': config('DB_PORT', default='5432'),
            'OPTIONS': {
                'client_encoding': 'UTF8',
                'connect_timeout': 10,
            },
            'CONN_MAX_AGE': 600,
        }
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': config('DB_NAME', default=str(BASE_DIR / 'db.sqlite3')),
        }
    }

# Internationalization
LANGUAGE_CODE = 'pt-br'

TIME_ZONE = 'America/Sao_Paulo'

USE_I18N = True

USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# REST Framework Configuration (somente serializers; não há views)
REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': (
        'rest_framework.renderers.JSONRenderer',
    ),
}

# Toolkit Settings
BANG_TOOLKIT = {
    'CHECKPOINT_ROOT': config('BANG_CHECKPOINT_ROOT', default=str(BASE_DIR / 'checkpoints')),

    # Configuração de mesa (padrão de todos os comandos)
    'DESK_MODEL': {
        'enc_layers': 2,
        'dec_layers': 2,
        'd_model': 64,
        'n_heads': 4,
        'd_ffn': 128,
        'vocab_size': 64,
        'max_positions': 128,
        'n_streams': 8,
        'rel_buckets': 32,
        'rel_max_distance': 64,
        'dropout': 0.1,
        'seed': 1,
    },

    # Escala completa: expressável, não exercitada pelos testes
    'FULL_MODEL': {
        'enc_layers': 6,
        'dec_layers': 6,
        'd_model': 768,
        'n_heads': 12,
        'd_ffn': 3072,
        'vocab_size': 30522,
        'max_positions': 512,
        'n_streams': 9,
        'rel_buckets': 32,
        'rel_max_distance': 128,
        'dropout': 0.1,
        'seed': 1,
    },

    'MASK_RENDER_MAX_CELLS': 10_000,

    'LATENCY': {
        'WARMUP': 5,
        'REPS': 50,
    },

    # Limiares de aceitação aplicados por `bench --gate`
    'GATES': {
        'AR_EXACT_MATCH': 95.0,
        'NAR_EXACT_MATCH': 50.0,
        'SEMI_NAR_SLACK': 2.0,
        'ABLATION_BLEU_MARGIN': 3.0,
        'LATENCY_MIN_OUTPUT_LEN': 16,
    },
}

# Logging Configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '[{levelname}] {asctime} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': config('BANG_LOG', default='INFO'),
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': config('DJANGO_LOG_LEVEL', default='WARNING'),
            'propagate': False,
        },
    },
}
