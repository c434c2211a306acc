from django.urls import path, include
from rest_framework.routers import DefaultRouter
from .views import ExperimentSubmitView, HealthView, JobViewSet, RunRecordViewSet
router = DefaultRouter()
router.register(r"jobs", JobViewSet, basename="job")
router.register(r"records", RunRecordViewSet, basename="record")
urlpatterns = [
    path("healthz/", HealthView.as_view()),
    path("experiments/run", ExperimentSubmitView.as_view()),
    path("", include(router.urls)),
]
