import json
import os
from typing import Any, Iterable, Iterator, List

import fsspec

from dwlab.errors import DatasetCollisionError


def exists(url, **kwargs) -> bool:
    """Check if a file exists on a remote filesystem."""
    fs, path = fsspec.core.url_to_fs(url, **kwargs)
    return fs.exists(path)


def mkdirs(url, **kwargs) -> None:
    fs, path = fsspec.core.url_to_fs(url, **kwargs)
    fs.makedirs(path, exist_ok=True)


def join(base: str, *parts: str) -> str:
    return os.path.join(base, *parts)


def ensure_write_once(*urls: str) -> None:
    """Raises DatasetCollisionError if any of the targets already exists."""
    for url in urls:
        if exists(url):
            raise DatasetCollisionError(url)


def dumps_jsonl_row(row: Any) -> str:
    return json.dumps(row, sort_keys=True, ensure_ascii=False)


def write_jsonl(url: str, rows: Iterable[Any]) -> int:
    """Writes rows (already-JSON-able objects) one per line. Returns the number of rows."""
    n = 0
    with fsspec.open(url, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(dumps_jsonl_row(row))
            f.write("\n")
            n += 1
    return n


def read_jsonl(url: str) -> List[dict]:
    return list(iter_jsonl(url))


def iter_jsonl(url: str) -> Iterator[dict]:
    with fsspec.open(url, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_json(url: str, obj: Any) -> None:
    with fsspec.open(url, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2, ensure_ascii=False)
        f.write("\n")


def read_json(url: str) -> Any:
    with fsspec.open(url, "r", encoding="utf-8") as f:
        return json.load(f)


def write_text(url: str, text: str) -> None:
    with fsspec.open(url, "w", encoding="utf-8", newline="") as f:
        f.write(text)
