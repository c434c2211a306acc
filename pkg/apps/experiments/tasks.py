import logging
from pathlib import Path

from celery import chord, shared_task
from django.conf import settings
from django.db import transaction
from django.utils import timezone

from .models import Job, RunRecord
from .services.config import ExperimentConfig, parse_experiment_config
from .services.harness import plan_cells, records_from_dicts, records_to_dicts, run_cell, summarize, write_experiment_outputs

logger = logging.getLogger(__name__)


def job_config(job: Job) -> ExperimentConfig:
    return parse_experiment_config(job.config, output_dir=job.output_dir)


def _fail(job: Job, e: Exception):
    job.status = Job.FAILED; job.error = str(e) or e.__class__.__name__; job.finished_at = timezone.now()
    job.save(update_fields=["status","error","finished_at"])
    logger.error("Experiment job %s failed: %s", job.id, job.error)


@shared_task
def run_experiment_job(job_id: int):
    job = Job.objects.get(id=job_id)
    job.status = Job.RUNNING; job.started_at = timezone.now()
    job.output_dir = job.output_dir or str(Path(settings.CIF_OUTPUT_DIR) / f"job-{job.id}")
    job.save(update_fields=["status","started_at","output_dir"])
    try:
        cells = plan_cells(job_config(job))
        logger.info("Job %s: fanning out %s cells", job.id, len(cells))
        header = [run_experiment_cell.s(job.id, cell.index) for cell in cells]
        chord(header)(finalize_experiment_job.s(job.id).on_error(fail_experiment_job.si(job.id)))
    except Exception as e:
        _fail(job, e); raise


@shared_task
def run_experiment_cell(job_id: int, index: int):
    job = Job.objects.get(id=job_id)
    try:
        cfg = job_config(job)
        records = run_cell(cfg, plan_cells(cfg)[index])
        return {"index": index, "records": records_to_dicts(records)}
    except Exception as e:
        _fail(job, e); raise


@shared_task
def finalize_experiment_job(results: list, job_id: int):
    job = Job.objects.get(id=job_id)
    try:
        cfg = job_config(job)
        ordered = sorted(results, key=lambda r: r["index"])
        records = [record for r in ordered for record in records_from_dicts(r["records"])]
        write_experiment_outputs(cfg, records)
        with transaction.atomic():
            RunRecord.objects.filter(job=job).delete()
            RunRecord.objects.bulk_create([
                RunRecord(job=job, cell=r["index"], **row) for r in ordered for row in r["records"]
            ])
            job.summary = summarize(records); job.status = Job.SUCCEEDED; job.finished_at = timezone.now()
            job.save(update_fields=["summary","status","finished_at"])
        logger.info("Job %s finished with %s records", job.id, len(records))
    except Exception as e:
        _fail(job, e); raise


@shared_task
def fail_experiment_job(job_id: int):
    job = Job.objects.get(id=job_id)
    if job.status != Job.FAILED:
        _fail(job, RuntimeError("an experiment cell failed"))
