"""
URL configuration for calibration_lab project.

Only the admin is served; recorded experiment runs are browsed there.
"""

from django.contrib import admin
from django.urls import path

urlpatterns = [
    path("admin/", admin.site.urls),
]
