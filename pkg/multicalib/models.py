from django.db import models

from .dynamics import DYNAMICS_CHOICES


class ExperimentRun(models.Model):
    PROBLEM_CHOICES = [
        ('mc', 'Multi-calibration'),
        ('moment', 'Moment multi-calibration'),
        ('agnostic', 'Agnostic multi-calibration'),
        ('conditional', 'Conditional multi-calibration'),
        ('competitive', 'Competitive (objective-wise)'),
    ]

    created_at = models.DateTimeField(auto_now_add=True)
    config_name = models.CharField(max_length=255)
    kind = models.CharField(max_length=20, choices=PROBLEM_CHOICES)
    dynamics = models.CharField(max_length=10, choices=DYNAMICS_CHOICES)
    seed = models.BigIntegerField()
    rounds = models.PositiveIntegerField()
    epsilon = models.FloatField()
    delta = models.FloatField()
    lam = models.FloatField(help_text="Bin width of the level grid")
    k = models.PositiveSmallIntegerField()
    r = models.PositiveSmallIntegerField(null=True, blank=True, help_text="Moment order, moment problems only")
    audited_loss = models.FloatField()
    opt_reference = models.FloatField(help_text="Brute-force optimum, or 0 for realizable instances")
    target = models.FloatField()
    passed = models.BooleanField(default=False)
    oracle_calls = models.PositiveIntegerField(default=0)
    samples = models.PositiveBigIntegerField(default=0)
    batch = models.CharField(max_length=100, blank=True, help_text="Sweep label shared by a batch of runs")
    output_dir = models.CharField(max_length=500, blank=True)
    summary = models.JSONField(default=dict)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.config_name} [{self.dynamics}] seed {self.seed}"

    @property
    def margin(self):
        return self.target - self.audited_loss

    @classmethod
    def from_summary(cls, summary, *, batch='', output_dir=''):
        config = summary['config']
        return cls(
            config_name=config['name'],
            kind=config['kind'],
            dynamics=config['dynamics'],
            seed=summary['seed'],
            rounds=summary['rounds'],
            epsilon=config['epsilon'],
            delta=config['delta'],
            lam=config['lambda'],
            k=config['k'],
            r=config.get('r'),
            audited_loss=summary['audited_loss'],
            opt_reference=summary['opt_reference'],
            target=summary['target'],
            passed=summary['passed'],
            oracle_calls=summary['oracle_calls'],
            samples=summary['samples'],
            batch=batch,
            output_dir=str(output_dir),
            summary=summary,
        )

