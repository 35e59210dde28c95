"""
Environment configuration for odelearn.

Values are read once at import time, after loading a .env file if present.
"""

import os

from dotenv import load_dotenv

load_dotenv()

DEFAULT_SEED = int(os.getenv("ODELEARN_SEED", "7"))
DEFAULT_THREADS = int(os.getenv("ODELEARN_THREADS", "1"))
LOG_LEVEL = os.getenv("ODELEARN_LOG_LEVEL", "INFO")
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Long reproduction tests only run when this is set
RUN_ACCEPTANCE = os.getenv("ODELEARN_RUN_ACCEPTANCE", "0") == "1"

# Evaluation chunk size fixes the summation order of every loss
CHUNK_SIZE = 256
