import os

from django.conf import settings

DEFAULTS = {
    "OBJECTIVE_CAP": 1_000_000,
    "GRID_CANDIDATE_CAP": 5_000,
    "BRUTE_FORCE_DOMAIN_CAP": 4,
    "BRUTE_FORCE_MIN_STEP": 0.25,
    "BRUTE_FORCE_ENUMERATION_CAP": 200_000,
    "ROUNDS_CONSTANT": 16,
    "SAMPLES_CONSTANT": 8,
    "NOISY_MAX_CONSTANT": 1.0,
    "WORKERS": None,
}


def get_setting(name, override=None):
    """Return ``settings.MULTICALIB[name]``, an explicit override, or the built-in default.

    Works without a configured Django project so the library modules can be
    imported on their own.
    """
    if override is not None:
        return override
    if name not in DEFAULTS:
        raise KeyError(f"unknown multicalib setting {name!r}")
    value = DEFAULTS[name]
    if settings.configured:
        value = getattr(settings, "MULTICALIB", {}).get(name, value)
    if name == "WORKERS" and not value:
        value = int(os.environ.get("MULTICALIB_WORKERS", "0")) or (os.cpu_count() or 1)
    return value
