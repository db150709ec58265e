from pymongo import MongoClient

from app.config import settings

# MongoDB connection details come from MONGO_URI (see app/config.py)
client = MongoClient(settings.mongo_uri)

# Get the database
db = client[settings.mongo_db]
