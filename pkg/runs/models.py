import uuid

from django.db import models
from django.core.validators import MinValueValidator


class RunStatus(models.TextChoices):
    """Status da execução"""
    RUNNING = 'RUNNING', 'Em execução'
    FINISHED = 'FINISHED', 'Concluída'
    FAILED = 'FAILED', 'Falhou'


class TrainingRun(models.Model):
    """Registro de uma execução de pretrain/finetune"""

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    command = models.CharField('comando', max_length=20)
    mode = models.CharField('modo', max_length=10)

    # Configuração efetiva
    config = models.JSONField('configuração', default=dict)
    config_hash = models.CharField('hash da configuração', max_length=12)
    seed = models.BigIntegerField('semente', default=1)

    status = models.CharField(
        'status',
        max_length=20,
        choices=RunStatus.choices,
        default=RunStatus.RUNNING
    )
    steps_completed = models.IntegerField(
        'passos concluídos',
        default=0,
        validators=[MinValueValidator(0)]
    )
    best_dev_loss = models.FloatField('melhor perda de dev', null=True, blank=True)
    checkpoint_dir = models.CharField('diretório do checkpoint', max_length=500)
    error = models.TextField('erro', blank=True)

    # Timestamps
    created_at = models.DateTimeField('criado em', auto_now_add=True)
    finished_at = models.DateTimeField('concluído em', null=True, blank=True)

    class Meta:
        verbose_name = 'execução de treino'
        verbose_name_plural = 'execuções de treino'
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['command', 'status'], name='runs_command_status_idx'),
        ]

    def __str__(self):
        return f"{self.command} {self.mode} ({self.get_status_display()}) - {self.checkpoint_dir}"

    def mark_finished(self, steps, best_dev_loss=None):
        """Marca a execução como concluída"""
        from django.utils import timezone

        if self.status == RunStatus.RUNNING:
            self.status = RunStatus.FINISHED
            self.steps_completed = steps
            self.best_dev_loss = best_dev_loss
            self.finished_at = timezone.now()
            self.save()

    def mark_failed(self, error, steps=None):
        """Marca a execução como falha, guardando a mensagem"""
        from django.utils import timezone

        if self.status == RunStatus.RUNNING:
            self.status = RunStatus.FAILED
            self.error = str(error)
            if steps is not None:
                self.steps_completed = steps
            self.finished_at = timezone.now()
            self.save()

    @property
    def is_finished(self):
        return self.status == RunStatus.FINISHED
