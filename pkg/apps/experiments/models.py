from django.db import models


class Job(models.Model):
    PENDING, RUNNING, SUCCEEDED, FAILED = "PENDING","RUNNING","SUCCEEDED","FAILED"
    STATUSES = [(s, s) for s in (PENDING, RUNNING, SUCCEEDED, FAILED)]
    idempotency_key = models.CharField(max_length=128, unique=True)
    experiment = models.CharField(max_length=32, blank=True, default="")
    config = models.JSONField(default=dict)
    status = models.CharField(max_length=16, choices=STATUSES, default=PENDING)
    error = models.TextField(blank=True, default="")
    output_dir = models.TextField(blank=True, default="")
    summary = models.JSONField(default=list, blank=True)
    started_at = models.DateTimeField(null=True, blank=True)
    finished_at = models.DateTimeField(null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    def __str__(self): return f"{self.experiment} job {self.pk} ({self.status})"


class RunRecord(models.Model):
    job = models.ForeignKey(Job, related_name="records", on_delete=models.CASCADE)
    cell = models.PositiveIntegerField()
    experiment = models.CharField(max_length=32)
    seed = models.BigIntegerField()
    method = models.CharField(max_length=64)
    N = models.PositiveIntegerField()
    replicate = models.PositiveIntegerField()
    metric = models.CharField(max_length=32)
    value = models.FloatField()

    class Meta:
        ordering = ("job", "cell", "id")
