"""Problem catalogs.

A catalog is a directory (local or under an S3 prefix) with one entry per
problem:

    <problem_id>/metadata.json   ProblemSummary fields
    <problem_id>/problem.ini     run configuration, xs_file relative to the entry
    <problem_id>/<xs_file>       cross-section library
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

import boto3

from app.config import parse_config, resolve_path
from app.discretization import CrossSections
from app.errors import ConfigError, CritkitError
from app.run_models import ProblemSummary, RunConfig, RunMode
from app.xs_library import parse_library

logger = logging.getLogger(__name__)

CONFIG_NAME = "problem.ini"
METADATA_NAME = "metadata.json"


def split_s3_url(url: str):
    if not url.startswith("s3://"):
        raise ValueError(f"not an s3 url: {url}")
    bucket, _, key = url[len("s3://"):].partition("/")
    if not bucket or not key:
        raise ValueError(f"s3 url needs a bucket and a key: {url}")
    return bucket, key


def read_s3_text(url: str, s3_client=None) -> str:
    bucket, key = split_s3_url(url)
    client = s3_client or boto3.client("s3")
    response = client.get_object(Bucket=bucket, Key=key)
    return response["Body"].read().decode("utf-8")


def read_location(location: str, s3_client=None) -> str:
    """Text of a local path or an s3:// object; failures become ConfigError"""
    try:
        if location.startswith("s3://"):
            return read_s3_text(location, s3_client)
        return Path(location).read_text()
    except Exception as e:
        logger.error("cannot read %s: %s", location, e)
        raise ConfigError(f"cannot read {location}: {e}") from e


class _ProblemCatalog:
    def _problem_ids(self) -> List[str]:
        raise NotImplementedError

    def _location(self, problem_id: str) -> str:
        raise NotImplementedError

    def _read_text(self, location: str) -> Optional[str]:
        raise NotImplementedError

    def _load_problems(self):
        """Load metadata of every catalog entry, skipping broken ones"""
        self.problems = []
        for problem_id in sorted(self._problem_ids()):
            text = self._read_text(f"{self._location(problem_id)}/{METADATA_NAME}")
            if text is None:
                continue
            try:
                metadata = json.loads(text)
                metadata.setdefault("problem_id", problem_id)
                problem = ProblemSummary(**metadata)
            except Exception as e:
                logger.warning("skipping problem %s: %s", problem_id, e)
                continue
            self.problems.append(problem)
            logger.info("loaded problem %s", problem.problem_id)

    def get_problems(self) -> List[ProblemSummary]:
        return self.problems

    def get_problem_by_id(self, problem_id: str) -> Optional[ProblemSummary]:
        for problem in self.problems:
            if problem.problem_id == problem_id:
                return problem
        return None

    def get_config(self, problem_id: str, mode: Optional[RunMode] = None) -> Optional[RunConfig]:
        """Parsed run configuration of a problem; ConfigError if it is invalid"""
        if not self.get_problem_by_id(problem_id):
            return None
        location = self._location(problem_id)
        text = self._read_text(f"{location}/{CONFIG_NAME}")
        if text is None:
            return None
        return parse_config(text, base_dir=location, mode=mode)

    def get_materials(self, problem_id: str) -> Optional[Dict[int, CrossSections]]:
        config = self.get_config(problem_id)
        if config is None:
            return None
        location = resolve_path(config, config.problem.xs_file)
        text = self._read_text(location)
        if text is None:
            return None
        try:
            return parse_library(text, location)
        except CritkitError as e:
            logger.warning("cannot parse materials of %s: %s", problem_id, e)
            return None


class LocalProblemLoader(_ProblemCatalog):
    def __init__(self, root):
        self.root = Path(root)
        self._load_problems()

    def _problem_ids(self) -> List[str]:
        if not self.root.is_dir():
            logger.warning("problem directory %s does not exist", self.root)
            return []
        return [entry.name for entry in self.root.iterdir() if (entry / METADATA_NAME).is_file()]

    def _location(self, problem_id: str) -> str:
        return str(self.root / problem_id)

    def _read_text(self, location: str) -> Optional[str]:
        try:
            return Path(location).read_text()
        except OSError as e:
            logger.warning("cannot read %s: %s", location, e)
            return None


class S3ProblemLoader(_ProblemCatalog):
    def __init__(self, bucket_name: str, data_prefix: str = "problems"):
        self.bucket_name = bucket_name
        self.data_prefix = data_prefix
        self.s3_client = boto3.client("s3")
        self._load_problems()

    def _problem_ids(self) -> List[str]:
        """Entry names one level under the data prefix, over every listing page"""
        prefix = f"{self.data_prefix}/"
        paginator = self.s3_client.get_paginator("list_objects_v2")
        try:
            pages = paginator.paginate(Bucket=self.bucket_name, Prefix=prefix, Delimiter="/")
            return [
                common["Prefix"][len(prefix):].rstrip("/")
                for page in pages
                for common in page.get("CommonPrefixes", [])
            ]
        except Exception as e:
            logger.error("cannot list problems under s3://%s/%s: %s", self.bucket_name, prefix, e)
            return []

    def _location(self, problem_id: str) -> str:
        return f"s3://{self.bucket_name}/{self.data_prefix}/{problem_id}"

    def _read_text(self, location: str) -> Optional[str]:
        try:
            return read_s3_text(location, self.s3_client)
        except Exception as e:
            logger.warning("error reading %s: %s", location, e)
            return None
