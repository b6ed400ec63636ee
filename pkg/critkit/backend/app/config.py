"""Run configuration files.

INI text with [problem], [solver], [bench] and [sweep] sections. Values are
validated by the pydantic models in app.run_models; every failure is raised
as a ConfigError naming the section, key and line.
"""

import configparser
import logging
import re
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from pydantic import ValidationError

from app.errors import ConfigError
from app.run_models import RunConfig

logger = logging.getLogger(__name__)

SECTIONS = ("run", "problem", "solver", "bench", "sweep")
LIST_KEYS = {
    "problem": ("widths", "materials"),
    "sweep": ("delta", "theta", "agg", "np1", "np2"),
}
SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
KEY_RE = re.compile(r"^\s*([A-Za-z0-9_]+)\s*[=:]")


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    """(section, key) -> line number where the key is set"""
    lines: Dict[Tuple[str, str], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        header = SECTION_RE.match(line)
        if header:
            section = header.group(1).strip()
            lines[(section, "")] = number
            continue
        key = KEY_RE.match(line)
        if key and section is not None:
            lines[(section, key.group(1).lower())] = number
    return lines


def _split_list(value: str):
    return [tok for tok in re.split(r"[,\s]+", value.strip()) if tok]


def parse_config(text: str, base_dir: Optional[Union[str, Path]] = None, mode: Optional[str] = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError("key given twice", section=e.section, key=e.option, line=e.lineno) from e
    except configparser.DuplicateSectionError as e:
        raise ConfigError("section given twice", section=e.section, line=e.lineno) from e
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("content before the first [section] header", line=e.lineno) from e
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigError("cannot parse line", line=line) from e

    lines = _key_lines(text)
    data: Dict[str, dict] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError("unknown section", section=section, line=lines.get((section, "")))
        values = dict(parser.items(section))
        for key in LIST_KEYS.get(section, ()):
            if key in values:
                values[key] = _split_list(values[key])
        data[section] = values

    run = data.pop("run", {})
    payload = dict(data)
    payload["mode"] = mode or run.get("mode", "nda")
    if base_dir is not None:
        payload["base_dir"] = str(base_dir)

    try:
        config = RunConfig(**payload)
    except ValidationError as e:
        error = e.errors()[0]
        location = [str(part) for part in error["loc"]]
        section = location[0] if location else None
        key = location[1] if len(location) > 1 else None
        if section == "mode":
            section, key = "run", "mode"
        line = lines.get((section, key or ""))
        raise ConfigError(error["msg"], section=section, key=key, line=line) from e

    logger.debug("parsed run configuration: mode %s", config.mode)
    return config


def load_config(path: Union[str, Path], mode: Optional[str] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    return parse_config(text, base_dir=path.parent, mode=mode)


def resolve_path(config: RunConfig, name: str) -> str:
    """Resolve a file reference relative to the configuration file; s3:// URLs pass through"""
    if name.startswith("s3://") or config.base_dir is None or Path(name).is_absolute():
        return name
    if config.base_dir.startswith("s3://"):
        return f"{config.base_dir.rstrip('/')}/{name}"
    return str(Path(config.base_dir) / name)
