"""
Django settings for the narmrec project.

narmrec has no web surface: Django provides the management-command front door,
the settings layer, logging configuration and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(BASE_DIR / ".env")

# Nothing is signed or served; Django still expects a key to be set.
SECRET_KEY = os.getenv("SECRET_KEY", "narmrec-local-only")

DEBUG = os.getenv("DEBUG") == "True"


# Application definition

INSTALLED_APPS = [
    'dataset',
    'numerics',
    'narm',
    'training',
    'evaluation',
    'baselines',
    'cli',
]

# Nothing is persisted through the ORM.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Recommender defaults (override in .env)

NARM_OUTPUT_DIR = Path(os.getenv("NARM_OUTPUT_DIR", BASE_DIR / "runs"))

NARM_LOG_LEVEL = os.getenv("NARM_LOG_LEVEL", "INFO").upper()

# Share of unparseable rows tolerated in a click log before preprocessing aborts.
NARM_MAX_MALFORMED_FRACTION = float(os.getenv("NARM_MAX_MALFORMED_FRACTION", "0.5"))


# Logging
# https://docs.djangoproject.com/en/5.2/topics/logging/

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        app: {"handlers": ["console"], "level": NARM_LOG_LEVEL, "propagate": False}
        for app in INSTALLED_APPS
    },
}
