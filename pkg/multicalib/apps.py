from django.apps import AppConfig


class MulticalibConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "multicalib"
    verbose_name = "Multi-calibration dynamics"
