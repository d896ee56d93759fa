import sys
import logging
from pathlib import Path
from celery import Celery

# Add the project root to Python path
project_root = Path(__file__).parent.absolute()
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from config.bayesmg_config import CELERY_EAGER, REDIS_URL  # noqa: E402
from modules.errors import BayesmgError  # noqa: E402
from modules.experiments import run_replication  # noqa: E402

logger = logging.getLogger(__name__)

# Create Celery app
celery_app = Celery('bayesmg')

# Configure Celery
celery_app.conf.update(
    broker_url=REDIS_URL,
    result_backend=REDIS_URL,
    task_serializer='json',
    accept_content=['json'],
    result_serializer='json',
    timezone='UTC',
    enable_utc=True,
    task_track_started=True,
    task_time_limit=2 * 60 * 60,  # 2 hours
    task_always_eager=CELERY_EAGER,
    task_eager_propagates=True,
    worker_prefetch_multiplier=1,
    task_acks_late=True,
)


@celery_app.task(name='bayesmg.replicate')
def replicate_task(name, rep, seed, params):
    """
    Celery task running one replication of a named experiment
    """
    try:
        rows = run_replication(name, rep, seed, params)
        return {'status': 'SUCCESS', 'rep': rep, 'rows': rows}
    except BayesmgError as e:
        logger.error(f"Replication {rep} of {name} failed: {str(e)}")
        return _failure(rep, e)
    except Exception as e:
        logger.exception(f"Replication {rep} of {name} failed unexpectedly: {str(e)}")
        return _failure(rep, e)


def _failure(rep, e):
    return {
        'status': 'FAILURE',
        'rep': rep,
        'error': type(e).__name__,
        'details': str(e),
    }


def dispatch_replications(name, reps, seed, params):
    """Send every replication to Celery and collect results in replication order."""
    pending = [replicate_task.apply_async(args=[name, rep, seed, params]) for rep in range(reps)]
    return [result.get() for result in pending]


if __name__ == '__main__':
    celery_app.start()
