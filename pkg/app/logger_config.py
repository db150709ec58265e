import logging

from app.config import settings

handlers = [logging.StreamHandler()]  # Log to the console
if settings.log_file:
    handlers.append(logging.FileHandler(settings.log_file))  # Log to a file

# Configure logging
logging.basicConfig(
    level=settings.log_level.upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=handlers,
)


# Initialize logger
logger = logging.getLogger("synth")
