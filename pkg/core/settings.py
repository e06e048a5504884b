"""
    Django settings for the splitfix project.

    The project has no web surface: settings only configure the splitfix app,
    its management commands & logging.
"""

import re as regex
from pathlib import Path

from django.core.exceptions import ImproperlyConfigured
from environ import Env

# Build paths inside the project like this: BASE_DIR / "subdir"
BASE_DIR = Path(__file__).resolve().parent.parent

# Adding additional (not manually specified) environment variables as settings values
Env.read_env(BASE_DIR / ".env")

env = Env(
    LOG_LEVEL=(str, "INFO"),
    VERSION=(str, "0.1.0"),
    SPLITFIX_WORKERS=(int, 4),
    SPLITFIX_DEFAULT_CONFIG=(str, str(BASE_DIR / "splitfix" / "default_config.ini")),
    SPLITFIX_GRADCHECK_INSTANCES=(int, 50),
    SPLITFIX_GRADCHECK_TOLERANCE=(float, 1e-4),
    SECRET_KEY=(str, "splitfix-offline-toolkit")
)

_log_level: str = env("LOG_LEVEL").upper()

# Confirming that the supplied environment variable values for these settings are one of the valid choices
_LOG_LEVEL_choices = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
if _log_level not in _LOG_LEVEL_choices:
    raise ImproperlyConfigured(f"LOG_LEVEL must be one of {_LOG_LEVEL_choices}")
if regex.search(r"^\d+(?:\.\d+){1,2}$", env("VERSION")) is None:
    raise ImproperlyConfigured("VERSION must be in this format: \"<number>.<number>.<number>\".")
if not env("SPLITFIX_WORKERS") > 0:
    raise ImproperlyConfigured("SPLITFIX_WORKERS must be an integer greater than 0.")
if not Path(env("SPLITFIX_DEFAULT_CONFIG")).is_file():
    raise ImproperlyConfigured("SPLITFIX_DEFAULT_CONFIG must be the path of an existing run configuration file.")
if not env("SPLITFIX_GRADCHECK_INSTANCES") > 0:
    raise ImproperlyConfigured("SPLITFIX_GRADCHECK_INSTANCES must be an integer greater than 0.")
if not 0.0 < env("SPLITFIX_GRADCHECK_TOLERANCE") < 1.0:
    raise ImproperlyConfigured("SPLITFIX_GRADCHECK_TOLERANCE must be a float between 0.0 and 1.0.")

DEBUG = False

# Toolkit settings values (stamped into outputs & used to control stage behaviour)
VERSION: str = env("VERSION")
SPLITFIX_WORKERS: int = env("SPLITFIX_WORKERS")
SPLITFIX_DEFAULT_CONFIG = Path(env("SPLITFIX_DEFAULT_CONFIG"))
SPLITFIX_GRADCHECK_INSTANCES: int = env("SPLITFIX_GRADCHECK_INSTANCES")
SPLITFIX_GRADCHECK_TOLERANCE: float = env("SPLITFIX_GRADCHECK_TOLERANCE")

# Logging settings
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "splitfix": {
            "format": "{levelname} - {module}: {message}",
            "style": "{"
        }
    },
    "handlers": {
        "splitfix": {
            "class": "logging.StreamHandler",
            "formatter": "splitfix"
        }
    },
    "loggers": {
        "matplotlib": {
            "handlers": ["splitfix"],
            "level": "WARNING",
            "propagate": False
        }
    },
    "root": {"handlers": ["splitfix"], "level": _log_level}
}

# Secret key is required by django even though nothing here is signed
SECRET_KEY = env("SECRET_KEY")

# App definitions
INSTALLED_APPS = [
    "splitfix.apps.SplitfixConfig"
]

# NOTE: No models exist, so no database is configured (tests use SimpleTestCase)
DATABASES = {}

TEST_RUNNER = "django.test.runner.DiscoverRunner"

# Language & time settings
LANGUAGE_CODE = "en-gb"
TIME_ZONE = "Europe/London"
USE_I18N = False
USE_TZ = True
