# Generated by Django 5.2.8 on 2026-10-18 21:40

import django.core.validators
import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('command', models.CharField(max_length=20, verbose_name='comando')),
                ('mode', models.CharField(max_length=10, verbose_name='modo')),
                ('config', models.JSONField(default=dict, verbose_name='configuração')),
                ('config_hash', models.CharField(max_length=12, verbose_name='hash da configuração')),
                ('seed', models.BigIntegerField(default=1, verbose_name='semente')),
                ('status', models.CharField(choices=[('RUNNING', 'Em execução'), ('FINISHED', 'Concluída'), ('FAILED', 'Falhou')], default='RUNNING', max_length=20, verbose_name='status')),
                ('steps_completed', models.IntegerField(default=0, validators=[django.core.validators.MinValueValidator(0)], verbose_name='passos concluídos')),
                ('best_dev_loss', models.FloatField(blank=True, null=True, verbose_name='melhor perda de dev')),
                ('checkpoint_dir', models.CharField(max_length=500, verbose_name='diretório do checkpoint')),
                ('error', models.TextField(blank=True, verbose_name='erro')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='criado em')),
                ('finished_at', models.DateTimeField(blank=True, null=True, verbose_name='concluído em')),
            ],
            options={
                'verbose_name': 'execução de treino',
                'verbose_name_plural': 'execuções de treino',
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['command', 'status'], name='runs_command_status_idx')],
            },
        ),
    ]
