import re
from typing import Any, Dict, List, Optional, Sequence, Tuple

import dwlab
from dwlab.config import config_hash, config_to_dict
from dwlab.errors import UsageError
from dwlab.utils import fsspec_utils


MANIFEST_FILE = "manifest.json"

_CELL_RE = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")


def parse_cells(text: str) -> List[Tuple[int, int]]:
    """ "2x2,3x4" -> [(2, 2), (3, 4)]. Duplicates are dropped, order kept."""
    cells: List[Tuple[int, int]] = []
    for part in text.split(","):
        if not part.strip():
            continue
        m = _CELL_RE.match(part)
        if m is None:
            raise UsageError(f"cannot parse cell {part!r}; expected DEPTHxWIDTH, e.g. 2x3")
        cell = (int(m.group(1)), int(m.group(2)))
        if cell not in cells:
            cells.append(cell)
    if not cells:
        raise UsageError(f"no cells in {text!r}")
    return cells


def check_levels(name: str, values: Sequence[int], minimum: int):
    if not values:
        raise UsageError(f"{name} is empty")
    bad = [v for v in values if v < minimum]
    if bad:
        raise UsageError(f"{name} must all be >= {minimum}, got {bad}")


def manifest(command: str, cfg: Any, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    out = {
        "command": command,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "version": dwlab.__version__,
    }
    if extra:
        out.update(extra)
    return out


def write_manifest(out_dir: str, command: str, cfg: Any, extra: Optional[Dict[str, Any]] = None) -> str:
    path = fsspec_utils.join(out_dir, MANIFEST_FILE)
    fsspec_utils.write_json(path, manifest(command, cfg, extra))
    return path
