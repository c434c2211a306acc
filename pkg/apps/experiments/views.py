from rest_framework.views import APIView
from rest_framework.viewsets import ReadOnlyModelViewSet
from rest_framework.response import Response
from rest_framework import status
from django.utils.crypto import get_random_string
from django.db import transaction
from drf_spectacular.utils import OpenApiParameter, extend_schema
from .models import Job, RunRecord
from .serializers import ExperimentSubmitSerializer, JobSerializer, RunRecordSerializer
from .services.errors import ConfigError
from .services.config import parse_experiment_config
from .tasks import run_experiment_job


class JobViewSet(ReadOnlyModelViewSet):
    queryset = Job.objects.all().order_by("-created_at")
    serializer_class = JobSerializer

class RunRecordViewSet(ReadOnlyModelViewSet):
    serializer_class = RunRecordSerializer

    @extend_schema(parameters=[OpenApiParameter("job", int, description="only rows of this job")])
    def list(self, request, *args, **kwargs):
        return super().list(request, *args, **kwargs)

    def get_queryset(self):
        qs = RunRecord.objects.all()
        job = self.request.query_params.get("job")
        return qs.filter(job_id=job) if job and job.isdigit() else qs

#---------------------------------------------------------------

class HealthView(APIView):
    def get(self, request):
        return Response({"status":"ok"})

class ExperimentSubmitView(APIView):
    @extend_schema(request=ExperimentSubmitSerializer, responses={200: JobSerializer, 202: JobSerializer})
    def post(self, request):
        payload = request.data.get("config")
        idem = request.headers.get("Idempotency-Key") or get_random_string(24)
        if not isinstance(payload, dict):
            return Response({"detail":"config object required"}, status=status.HTTP_400_BAD_REQUEST)
        try:
            cfg = parse_experiment_config(payload)
        except ConfigError as e:
            return Response({"detail":str(e)}, status=status.HTTP_400_BAD_REQUEST)
        with transaction.atomic():
            job, created = Job.objects.get_or_create(
                idempotency_key=idem, defaults={"experiment":cfg.experiment, "config":cfg.model_dump(mode="json")},
            )
            if not created: return Response(JobSerializer(job).data, status=status.HTTP_200_OK)
            run_experiment_job.delay(job.id)
            job.refresh_from_db()
            return Response(JobSerializer(job).data, status=status.HTTP_202_ACCEPTED)
