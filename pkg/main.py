import logging
import os
import sys

import dotenv

dotenv.load_dotenv(".env")

from src.cli import create_cli

logging.basicConfig(
    format="%(asctime)s [%(levelname)s] %(message)s",
    level=os.environ.get("FOODSHOCK_LOG_LEVEL", "INFO").upper(),
    stream=sys.stdout,
)
log = logging.getLogger(__name__)


if __name__ == "__main__":
    create_cli()(prog_name="foodshock")
