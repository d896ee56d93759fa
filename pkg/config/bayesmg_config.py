import os
from pathlib import Path
from dotenv import load_dotenv

# Get the config directory path
CONFIG_DIR = Path(__file__).parent
PROJECT_ROOT = CONFIG_DIR.parent

# Load environment variables (config/config.env first, then the process environment)
load_dotenv(CONFIG_DIR / 'config.env')

# Run configuration document
CONFIG_PATH = Path(os.getenv('BAYESMG_CONFIG', str(CONFIG_DIR / 'master_config.json')))

# Artifacts and logs
OUTPUT_DIR = Path(os.getenv('BAYESMG_OUTPUT_DIR', 'output'))
LOG_FILE = Path(os.getenv('BAYESMG_LOG_FILE', 'bayesmg.log'))

# Celery fan-out for `replicate` and multi-chain runs
REDIS_URL = os.getenv('REDIS_URL', 'redis://localhost:6379/0')
CELERY_EAGER = os.getenv('BAYESMG_CELERY_EAGER', '1').strip().lower() not in ('0', 'false', 'no', 'off')

# Input formats understood by load_matrix
SUPPORTED_MATRIX_FORMATS = ['dense-csv', 'triplet-csv', 'pgm']
