# settings.py (db, celery, logging, engine defaults)

from urllib.parse import urlparse
from pathlib import Path
BASE_DIR = Path(__file__).resolve().parent.parent

from decouple import Csv, config
from django.core.management.utils import get_random_secret_key

SECRET_KEY = config("SECRET_KEY", default="") or ("dev-" + get_random_secret_key())


DEBUG = config("DEBUG", default=True, cast=bool)
ALLOWED_HOSTS = config("ALLOWED_HOSTS", default="*", cast=Csv())

WSGI_APPLICATION = "cif_lab.wsgi.application"

# ---- Database ----
# Compose passes DB_*; DATABASE_URL overrides; DB_ENGINE=sqlite3 for local runs without Postgres.
DB_ENGINE = config("DB_ENGINE", default="postgresql")
DB_NAME = config("DB_NAME", default=config("POSTGRES_DB", default="postgres"))
DB_USER = config("DB_USER", default=config("POSTGRES_USER", default="postgres"))
DB_PASSWORD = config("DB_PASSWORD", default=config("POSTGRES_PASSWORD", default="postgres"))
DB_HOST = config("DB_HOST", default="db")          # <- Docker service name, not localhost
DB_PORT = config("DB_PORT", default=5432, cast=int)

DATABASE_URL = config("DATABASE_URL", default="").strip()
if DATABASE_URL:
    p = urlparse(DATABASE_URL)
    DB_NAME = (p.path.lstrip("/") or DB_NAME)
    DB_USER = (p.username or DB_USER)
    DB_PASSWORD = (p.password or DB_PASSWORD)
    DB_HOST = (p.hostname or DB_HOST)
    DB_PORT = (p.port or DB_PORT)

if DB_ENGINE == "sqlite3":
    DATABASES = {"default": {"ENGINE": "django.db.backends.sqlite3", "NAME": BASE_DIR / "db.sqlite3"}}
else:
    DATABASES = {
        "default": {
            "ENGINE": "django.db.backends.postgresql",
            "NAME": DB_NAME,
            "USER": DB_USER,
            "PASSWORD": DB_PASSWORD,
            "HOST": DB_HOST,
            "PORT": DB_PORT,
        }
    }

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# ---- Static ----
STATIC_URL = "/static/"
STATIC_ROOT = config("STATIC_ROOT", default=str(BASE_DIR / "staticfiles"))

# ---- DRF + Spectacular ----
REST_FRAMEWORK = {"DEFAULT_SCHEMA_CLASS": "drf_spectacular.openapi.AutoSchema"}
SPECTACULAR_SETTINGS = {
    "TITLE": "CIF Lab API",
    "DESCRIPTION": "Information-geometric model selection experiments for Boltzmann machines",
    "VERSION": "1.0.0",
    "SERVE_INCLUDE_SCHEMA": False,
    "SWAGGER_UI_DIST": "SIDECAR",
    "SWAGGER_UI_FAVICON_HREF": "SIDECAR",
}

# ---- Celery / Redis ----
DEFAULT_REDIS_URL = "redis://redis:6379/0"
CELERY_BROKER_URL = config("CELERY_BROKER_URL", default=config("REDIS_URL", default=DEFAULT_REDIS_URL))
CELERY_RESULT_BACKEND = config("CELERY_RESULT_BACKEND", default=CELERY_BROKER_URL)
CELERY_TASK_ALWAYS_EAGER = config("CELERY_TASK_ALWAYS_EAGER", default=False, cast=bool)
CELERY_TASK_EAGER_PROPAGATES = True

# ---- Engine ----
CIF_OUTPUT_DIR = config("CIF_OUTPUT_DIR", default=str(BASE_DIR / "results"))

# ---- Logging ----
LOG_LEVEL = config("LOG_LEVEL", default="INFO")
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {"plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"}},
    "handlers": {"console": {"class": "logging.StreamHandler", "formatter": "plain"}},
    "loggers": {
        "apps": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
        "cif_lab": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
        "django": {"handlers": ["console"], "level": "WARNING"},
    },
}


ROOT_URLCONF = "cif_lab.urls"

INSTALLED_APPS = [
    # Django core
    "django.contrib.admin",
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "django.contrib.sessions",
    "django.contrib.messages",
    "django.contrib.staticfiles",

    # 3rd-party
    "rest_framework",
    "drf_spectacular",
    "drf_spectacular_sidecar",

    # Local
    "apps.experiments",
]

MIDDLEWARE = [
    "django.middleware.security.SecurityMiddleware",
    "django.contrib.sessions.middleware.SessionMiddleware",
    "django.middleware.common.CommonMiddleware",
    "django.middleware.csrf.CsrfViewMiddleware",
    "django.contrib.auth.middleware.AuthenticationMiddleware",
    "django.contrib.messages.middleware.MessageMiddleware",
    "django.middleware.clickjacking.XFrameOptionsMiddleware",
]

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "context_processors": [
                "django.template.context_processors.debug",
                "django.template.context_processors.request",
                "django.contrib.auth.context_processors.auth",
                "django.contrib.messages.context_processors.messages",
            ],
        },
    },
]
