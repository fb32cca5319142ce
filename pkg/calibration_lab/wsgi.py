"""
WSGI config for calibration_lab project.

Exposes the admin of recorded runs as ``application``.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "calibration_lab.settings")

application = get_wsgi_application()
