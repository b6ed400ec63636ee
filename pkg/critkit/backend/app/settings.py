"""Environment-driven settings"""

import logging
import os
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)

BUNDLED_PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def thread_limit() -> int:
    """Worker threads for per-rank subdomain solves (CRITKIT_THREADS, default 1)"""
    raw = os.environ.get("CRITKIT_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer CRITKIT_THREADS=%r", raw)
        return 1
    return max(1, value)


def log_level(default: str = "WARNING") -> str:
    return os.environ.get("CRITKIT_LOG_LEVEL", default).upper()


def problem_dir() -> str:
    return os.environ.get("CRITKIT_PROBLEM_DIR", str(BUNDLED_PROBLEMS))


def problem_bucket() -> Optional[str]:
    """S3 bucket of the problem catalog; unset means the local directory"""
    return os.environ.get("CRITKIT_PROBLEM_BUCKET")


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or log_level()).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
