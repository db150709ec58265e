# app/tasks.py
from celery import Celery

from app.config import settings
from app.logger_config import logger
from app.pipeline_service import synthesis_service
from app.schemas import RunRequest

# Import repository functions
from app.run_repository import get_run_by_id, update_run_status, update_run_result

# Initialize Celery
celery_app = Celery("tasks", broker=settings.celery_broker_url)
celery_app.conf.broker_connection_retry_on_startup = True
celery_app.conf.worker_pool = "solo"


@celery_app.task
def perform_synthesis_run(run_id: str, request: dict):
    try:
        logger.info(f"Received synthesis run {run_id} for input {request.get('input_path')}")

        # Fetch the run object from MongoDB
        run = get_run_by_id(run_id)
        if not run:
            logger.error(f"Run with ID {run_id} not found.")
            return

        update_run_status(run_id, "in_progress")
        logger.info(f"Updated status to 'in_progress' for run ID {run_id}")

        try:
            run_request = RunRequest.model_validate(request)
            report = synthesis_service.run_pipeline(
                run_request.input_path, run_request.template_path, run_request.config, run_request.out_dir
            )
            logger.info(f"Synthesis run {run_id} completed with dsc={report.dsc:.4f}")

            # Save result and update status
            update_run_status(run_id, "completed")
            update_run_result(run_id, report.model_dump(mode="json"))

        except Exception as e:
            logger.error(f"Error during synthesis run {run_id}: {e}", exc_info=True)
            update_run_status(run_id, "failed")
            update_run_result(run_id, {"error": str(e)})

    except Exception as e:
        logger.error(f"Unexpected error in task for run ID {run_id}: {e}")
