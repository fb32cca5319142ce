#!/usr/bin/env python
"""Command-line entry point: experiments, audits, sweeps and the test runner.

    ./manage.py run_experiment --config mc_small.json --seed 3
    ./manage.py test multicalib --exclude-tag slow
"""
import os
import sys


def main():
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "calibration_lab.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError("Django is not installed; run `pip install -r requirements.txt` first.") from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
