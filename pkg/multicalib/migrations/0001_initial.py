# Generated by Django 6.0 on 2026-10-19 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("config_name", models.CharField(max_length=255)),
                (
                    "kind",
                    models.CharField(
                        choices=[
                            ("mc", "Multi-calibration"),
                            ("moment", "Moment multi-calibration"),
                            ("agnostic", "Agnostic multi-calibration"),
                            ("conditional", "Conditional multi-calibration"),
                            ("competitive", "Competitive (objective-wise)"),
                        ],
                        max_length=20,
                    ),
                ),
                (
                    "dynamics",
                    models.CharField(
                        choices=[
                            ("nrnr", "No-regret vs no-regret"),
                            ("nrbr", "No-regret vs best response"),
                        ],
                        max_length=10,
                    ),
                ),
                ("seed", models.BigIntegerField()),
                ("rounds", models.PositiveIntegerField()),
                ("epsilon", models.FloatField()),
                ("delta", models.FloatField()),
                ("lam", models.FloatField(help_text="Bin width of the level grid")),
                ("k", models.PositiveSmallIntegerField()),
                (
                    "r",
                    models.PositiveSmallIntegerField(
                        blank=True,
                        help_text="Moment order, moment problems only",
                        null=True,
                    ),
                ),
                ("audited_loss", models.FloatField()),
                (
                    "opt_reference",
                    models.FloatField(help_text="Brute-force optimum, or 0 for realizable instances"),
                ),
                ("target", models.FloatField()),
                ("passed", models.BooleanField(default=False)),
                ("oracle_calls", models.PositiveIntegerField(default=0)),
                ("samples", models.PositiveBigIntegerField(default=0)),
                (
                    "batch",
                    models.CharField(
                        blank=True,
                        help_text="Sweep label shared by a batch of runs",
                        max_length=100,
                    ),
                ),
                ("output_dir", models.CharField(blank=True, max_length=500)),
                ("summary", models.JSONField(default=dict)),
            ],
            options={
                "ordering": ["-created_at"],
            },
        ),
    ]
