from app.logger_config import logger
from app.tasks import celery_app

if __name__ == "__main__":
    logger.info("Starting synthesis worker.....")
    celery_app.worker_main(["worker", "--loglevel=info", "--pool=solo"])
