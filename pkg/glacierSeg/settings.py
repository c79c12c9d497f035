"""
Django settings for the glacierSeg project.

The project is driven from the command line (``manage.py``); there is no web
surface. Besides the usual Django keys this module holds the ``GLACIER_SEG``
defaults used by every run configuration.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: no request handling happens, but Django still requires a key.
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'glacierseg-local-only-key')

DEBUG = os.environ.get('DJANGO_DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'rest_framework',
    'engine',
    'scenes',
    'runs',
]


# Database
# Run bookkeeping only; sqlite keeps the project desk-scale.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('GLACIER_SEG_DB', str(BASE_DIR / 'glacierseg.sqlite3')),
    }
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Default primary key field type

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging

LOG_LEVEL = os.environ.get('GLACIER_SEG_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'engine': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
        'scenes': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
        'runs': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
    },
}


# Rest Framework Configuration
# Serializers validate run configurations and shape reports; nothing is served.
REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [],
    'UNAUTHENTICATED_USER': None,
}


# Glacier segmentation defaults

RUN_ROOT = Path(os.environ.get('GLACIER_SEG_RUN_ROOT', BASE_DIR / 'runs_output'))
DATA_DIR = Path(os.environ.get('GLACIER_SEG_DATA_DIR', BASE_DIR / 'data'))

GLACIER_SEG = {
    # network
    'BASE_FILTERS': 32,
    'LEVELS': 5,
    'KERNEL': 5,
    'FINAL_KERNEL': 3,
    'DROPOUT_RATE': 0.5,
    'PATCH_SIZE': 256,
    # optimizer / training
    'LEARNING_RATE': 1e-4,
    'BETA1': 0.9,
    'BETA2': 0.999,
    'ADAM_EPS': 1e-8,
    'BATCH_SIZE': 4,
    'PATIENCE': 30,
    'MAX_EPOCHS': 250,
    # MC dropout
    'MC_SAMPLES': 20,
    'MC_WORKERS': 1,
    'THRESHOLD_POLICY': 'histogram_auto',
    'THRESHOLD_VALUE': 0.125,
    'MASK_THRESHOLD': 0.5,
    'STAGE2_INIT': 'scratch',
    'BOUNDARY_BAND': 5,
    # data
    'SPLIT': (144, 50, 50),
    'SEED': 0,
}
