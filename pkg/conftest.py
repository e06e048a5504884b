"""Configures Django for pytest, mirroring manage.py's settings module."""
import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "core.settings")
django.setup()
