from unittest.mock import patch

from app import settings
from app.main import get_problem_loader
from app.problem_loader import LocalProblemLoader, S3ProblemLoader


def test_thread_limit(monkeypatch):
    monkeypatch.delenv("CRITKIT_THREADS", raising=False)
    assert settings.thread_limit() == 1
    monkeypatch.setenv("CRITKIT_THREADS", "4")
    assert settings.thread_limit() == 4
    monkeypatch.setenv("CRITKIT_THREADS", "0")
    assert settings.thread_limit() == 1
    monkeypatch.setenv("CRITKIT_THREADS", "many")
    assert settings.thread_limit() == 1


def test_log_level(monkeypatch):
    monkeypatch.delenv("CRITKIT_LOG_LEVEL", raising=False)
    assert settings.log_level() == "WARNING"
    monkeypatch.setenv("CRITKIT_LOG_LEVEL", "debug")
    assert settings.log_level() == "DEBUG"


def test_problem_dir_defaults_to_bundled_catalog(monkeypatch, problems_dir):
    monkeypatch.delenv("CRITKIT_PROBLEM_DIR", raising=False)
    assert settings.problem_dir() == str(problems_dir)


def test_loader_follows_environment(monkeypatch, problems_dir):
    monkeypatch.delenv("CRITKIT_PROBLEM_BUCKET", raising=False)
    monkeypatch.setenv("CRITKIT_PROBLEM_DIR", str(problems_dir))
    get_problem_loader.cache_clear()
    try:
        assert isinstance(get_problem_loader(), LocalProblemLoader)
        get_problem_loader.cache_clear()
        monkeypatch.setenv("CRITKIT_PROBLEM_BUCKET", "critkit-problems")
        with patch("app.problem_loader.boto3"):
            assert isinstance(get_problem_loader(), S3ProblemLoader)
    finally:
        get_problem_loader.cache_clear()
