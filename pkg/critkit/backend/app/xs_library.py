"""Cross-section library text format.

    # comments run to end of line
    material 0
    sigma_t    = 0.3 1.0
    sigma_s    = 0.25 0.03  0.0 0.9     # G x G, row g_from
    nu_sigma_f = 0.005 0.15
    chi        = 1 0
    D          = 1.2 0.4                # optional, defaults to 1/(3 sigma_t)
    sigma_s1   = ...                    # optional, G x G

Values may be separated by whitespace or commas.
"""

import logging
from pathlib import Path
from typing import Dict, List, Union

from pydantic import ValidationError

from app.discretization import CrossSections
from app.errors import CrossSectionError

logger = logging.getLogger(__name__)

VECTOR_KEYS = ("sigma_t", "nu_sigma_f", "chi", "D")
MATRIX_KEYS = ("sigma_s", "sigma_s1")


def _numbers(text: str, where: str) -> List[float]:
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError as e:
        raise CrossSectionError(f"{where}: {e}") from e


def _build(material: int, raw: Dict[str, List[float]], where: str) -> CrossSections:
    if "sigma_t" not in raw:
        raise CrossSectionError(f"{where}: material {material} has no sigma_t")
    G = len(raw["sigma_t"])
    fields: Dict[str, object] = {}
    for key, values in raw.items():
        if key in MATRIX_KEYS:
            if len(values) != G * G:
                raise CrossSectionError(
                    f"{where}: {key} of material {material} needs {G * G} values, got {len(values)}"
                )
            fields[key] = [values[g * G:(g + 1) * G] for g in range(G)]
        else:
            fields[key] = values
    fields.setdefault("sigma_s", [[0.0] * G for _ in range(G)])
    fields.setdefault("nu_sigma_f", [0.0] * G)
    fields.setdefault("chi", [1.0] + [0.0] * (G - 1))
    try:
        return CrossSections(**fields)
    except ValidationError as e:
        messages = "; ".join(err["msg"] for err in e.errors())
        raise CrossSectionError(f"{where}: material {material}: {messages}") from e


def parse_library(text: str, source: str = "<string>") -> Dict[int, CrossSections]:
    library: Dict[int, CrossSections] = {}
    current = None
    start_line = 0
    raw: Dict[str, List[float]] = {}

    def flush():
        if current is not None:
            library[current] = _build(current, raw, f"{source} line {start_line}")

    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source} line {number}"
        if line.startswith("material"):
            flush()
            parts = line.split()
            if len(parts) != 2:
                raise CrossSectionError(f"{where}: expected 'material <id>'")
            try:
                current = int(parts[1])
            except ValueError as e:
                raise CrossSectionError(f"{where}: material id must be an integer") from e
            if current in library:
                raise CrossSectionError(f"{where}: material {current} defined twice")
            start_line, raw = number, {}
            continue
        if "=" not in line:
            raise CrossSectionError(f"{where}: expected 'key = values'")
        if current is None:
            raise CrossSectionError(f"{where}: values before the first 'material' header")
        key, values = (part.strip() for part in line.split("=", 1))
        if key not in VECTOR_KEYS + MATRIX_KEYS:
            raise CrossSectionError(f"{where}: unknown key {key!r}")
        if key in raw:
            raise CrossSectionError(f"{where}: {key} given twice")
        raw[key] = _numbers(values, where)
    flush()

    if not library:
        raise CrossSectionError(f"{source}: no materials defined")
    logger.debug("parsed %d materials from %s", len(library), source)
    return library


def load_library(path: Union[str, Path]) -> Dict[int, CrossSections]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise CrossSectionError(f"cannot read cross-section library {path}: {e}") from e
    return parse_library(text, str(path))


def format_library(library: Dict[int, CrossSections]) -> str:
    lines = []
    for material, xs in sorted(library.items()):
        lines.append(f"material {material}")
        lines.append("sigma_t = " + " ".join(repr(v) for v in xs.sigma_t))
        lines.append("sigma_s = " + " ".join(repr(v) for row in xs.sigma_s for v in row))
        lines.append("nu_sigma_f = " + " ".join(repr(v) for v in xs.nu_sigma_f))
        lines.append("chi = " + " ".join(repr(v) for v in xs.chi))
        if xs.D is not None:
            lines.append("D = " + " ".join(repr(v) for v in xs.D))
        if xs.sigma_s1 is not None:
            lines.append("sigma_s1 = " + " ".join(repr(v) for row in xs.sigma_s1 for v in row))
        lines.append("")
    return "\n".join(lines)
