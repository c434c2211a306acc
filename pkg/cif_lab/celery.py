import os
from celery import Celery
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "cif_lab.settings")
app = Celery("cif_lab")
app.config_from_object("django.conf:settings", namespace="CELERY")
app.autodiscover_tasks()
celery_app = app
