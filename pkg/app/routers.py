# app/routers.py
from fastapi import APIRouter, HTTPException

from app.errors import InvalidInputError
from app.logger_config import logger
from app.run_service import RunService
from app.schemas import RunRequest, RunResponse

router = APIRouter()
run_service = RunService()


def _to_response(run: dict) -> RunResponse:
    return RunResponse(id=run["_id"], status=run["status"], result=run.get("result"))


@router.post("/start-run", response_model=RunResponse)
def start_run(request: RunRequest) -> RunResponse:
    logger.info(f"Received request to start synthesis run for input: {request.input_path}")
    try:
        run = run_service.start_run(request)
        return _to_response(run)
    except InvalidInputError as ve:
        logger.warning(f"Invalid run request for input: {request.input_path}. Error: {str(ve)}")
        raise HTTPException(status_code=400, detail=str(ve))
    except Exception as e:
        logger.error(f"Error starting run for input: {request.input_path}. Error: {str(e)}", exc_info=True)
        raise HTTPException(status_code=500, detail="Internal Server Error")


@router.get("/get-run/{run_id}", response_model=RunResponse)
def get_run(run_id: str) -> RunResponse:
    logger.info(f"Fetching synthesis run for run ID: {run_id}")
    try:
        run = run_service.get_run(run_id=run_id)
    except KeyError:
        logger.warning(f"Run with ID {run_id} not found")
        raise HTTPException(status_code=404, detail="Run not found")
    except Exception as e:
        logger.error(f"Error fetching run {run_id}: {str(e)}", exc_info=True)
        raise HTTPException(status_code=500, detail="Internal Server Error")
    return _to_response(run)
