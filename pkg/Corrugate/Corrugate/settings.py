from pathlib import Path
import math
import os
from dotenv import load_dotenv
import dj_database_url

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load .env in local dev only (Render sets RENDER=true)
if os.environ.get("RENDER", "") != "true":
    load_dotenv()

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get("DJANGO_SECRET_KEY", "unsafe-dev-key")

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.environ.get("DEBUG", "False").lower() == "true"

ALLOWED_HOSTS = [h.strip() for h in os.environ.get("DJANGO_ALLOWED_HOSTS", "localhost,127.0.0.1").split(",") if h.strip()]

# Application definition
INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',

    # Numerical pipeline, bottom-up
    'apps.grid',
    'apps.corrugation',
    'apps.decompose',
    'apps.frames',
    'apps.step',
    'apps.stage',
    'apps.engine',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'Corrugate.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'Corrugate.wsgi.application'

# Database configuration using DATABASE_URL from environment
DATABASE_URL = os.environ.get('DATABASE_URL')
if DATABASE_URL:
    DATABASES = {
        'default': dj_database_url.config(
            default=DATABASE_URL,
            conn_max_age=0,
            conn_health_checks=True,
        )
    }
else:
    # Run ledger stays local by default
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': BASE_DIR / 'db.sqlite3',
        }
    }

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

STATIC_URL = '/static/'
STATIC_ROOT = BASE_DIR / 'staticfiles'

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


def _env_number(key, default):
    raw = os.environ.get(f"CORRUGATE_{key}")
    if raw is None or raw == "":
        return default
    return type(default)(raw)


# Numerical knobs; every entry can be overridden with CORRUGATE_<KEY>
CORRUGATE = {
    # grid
    'STENCIL_ACCURACY': _env_number('STENCIL_ACCURACY', 4),
    'HOLDER_RADIUS': _env_number('HOLDER_RADIUS', 0.25),
    'HOLDER_PAIR_BUDGET': _env_number('HOLDER_PAIR_BUDGET', 1_000_000),
    'INJECTIVITY_PAIRS': _env_number('INJECTIVITY_PAIRS', 20_000),
    # corrugation
    'S_MAX': _env_number('S_MAX', 0.6),
    'ALPHA_TABLE_SIZE': _env_number('ALPHA_TABLE_SIZE', 512),
    'QUADRATURE_PANELS': _env_number('QUADRATURE_PANELS', 64),
    # decompose
    'DECOMPOSE_CLAMP': _env_number('DECOMPOSE_CLAMP', 1e-14),
    'PICARD_TOL': _env_number('PICARD_TOL', 1e-12),
    'PICARD_MAX_ITER': _env_number('PICARD_MAX_ITER', 100),
    'CONFORMAL_TOL': _env_number('CONFORMAL_TOL', 1e-12),
    'CONFORMAL_MAX_ITER': _env_number('CONFORMAL_MAX_ITER', 200),
    'CONFORMAL_NEAR_FLAT': _env_number('CONFORMAL_NEAR_FLAT', 0.3),
    # frames
    'FRAME_SEAM_MAX_ANGLE': _env_number('FRAME_SEAM_MAX_ANGLE', math.pi / 2),
    # step / stage
    'STEP_CONSTANT_C0': _env_number('STEP_CONSTANT_C0', 1.0),
    'STEP_BOUND_M': _env_number('STEP_BOUND_M', 10.0),
    'CUTOFF_CONSTANT_C0': _env_number('CUTOFF_CONSTANT_C0', 1.0),
    'HYPOTHESIS_CONSTANT': _env_number('HYPOTHESIS_CONSTANT', 4.0),
    'STAGE_BOUND_C': _env_number('STAGE_BOUND_C', 50.0),
    # engine
    'RHO_MIN': _env_number('RHO_MIN', 1e-3),
    'RESOLUTION_FACTOR': _env_number('RESOLUTION_FACTOR', 8),
    'SEED': _env_number('SEED', 20240607),
    'OUTPUT_DIR': os.environ.get('CORRUGATE_OUTPUT_DIR', str(BASE_DIR / 'runs')),
    'CALIBRATION_MANIFEST': os.environ.get('CORRUGATE_CALIBRATION_MANIFEST', str(BASE_DIR / 'calibration.json')),
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
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
        'apps': {
            'handlers': ['console'],
            'level': os.environ.get('CORRUGATE_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'utils': {
            'handlers': ['console'],
            'level': os.environ.get('CORRUGATE_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}
