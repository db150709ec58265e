# app/run_repository.py
from typing import Optional

from app.models import synthesis_runs_collection


def create_run(run_id: str, request: dict):
    run = {
        "_id": run_id,
        "request": request,
        "status": "pending",
        "result": None
    }
    synthesis_runs_collection.insert_one(run)
    return run


def get_run_by_id(run_id: str) -> Optional[dict]:
    return synthesis_runs_collection.find_one({"_id": run_id})


def update_run_status(run_id: str, status: str):
    synthesis_runs_collection.update_one(
        {"_id": run_id},
        {"$set": {"status": status}}
    )


def update_run_result(run_id: str, result: dict):
    synthesis_runs_collection.update_one(
        {"_id": run_id},
        {"$set": {"result": result}}
    )
