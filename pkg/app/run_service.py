# app/run_service.py
import uuid
from pathlib import Path

from app.errors import InvalidInputError
from app.logger_config import logger
from app.run_repository import create_run, get_run_by_id
from app.schemas import RunRequest
from app.tasks import perform_synthesis_run


class RunService:
    def __init__(self):
        pass

    def validate_request(self, request: RunRequest) -> None:
        """Input files must exist before a run is queued; the worker reads the same paths."""
        logger.info(f"Starting validate_request")
        for label, path in (("input", request.input_path), ("template", request.template_path)):
            if not Path(path).is_file():
                logger.error(f"Invalid run request, {label} file not found: {path}")
                raise InvalidInputError(f"{label} file not found: {path}")

    def start_run(self, request: RunRequest) -> dict:
        run_id = str(uuid.uuid4())
        logger.info(f"Validating run request for input: {request.input_path}")
        self.validate_request(request)

        try:
            run = create_run(run_id=run_id, request=request.model_dump(mode="json"))
            logger.info(f"Run object inserted with ID: {run_id}")
        except Exception as e:
            logger.error(f"Error inserting run object: {e}")
            raise

        perform_synthesis_run.delay(run_id, request.model_dump(mode="json"))
        return run

    def get_run(self, run_id: str) -> dict:
        logger.info(f"Fetching synthesis run for ID: {run_id}")
        run = get_run_by_id(run_id)
        if not run:
            logger.warning(f"Run with ID {run_id} not found")
            raise KeyError(run_id)
        return run
