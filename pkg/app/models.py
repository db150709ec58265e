from app.database import db

# Define the synthesis-run collection
synthesis_runs_collection = db["synthesis_runs"]
