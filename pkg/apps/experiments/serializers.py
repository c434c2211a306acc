from rest_framework import serializers
from .models import Job, RunRecord
class JobSerializer(serializers.ModelSerializer):
    class Meta:
        model = Job
        fields = ("id","idempotency_key","experiment","config","status","error","output_dir","summary","started_at","finished_at","created_at")
class RunRecordSerializer(serializers.ModelSerializer):
    class Meta:
        model = RunRecord
        fields = ("id","job","cell","experiment","seed","method","N","replicate","metric","value")
class ExperimentSubmitSerializer(serializers.Serializer):
    config = serializers.DictField()
