"""Write-once evidence store for run artifacts.

Screenshots, evidence packages, scorecards, and reports all land here,
keyed by relative paths under a run directory.  Keys are write-once: a
second write with identical bytes is a no-op (which is what makes resumed
runs reproducible), a second write with different bytes is a conflict and
fails loudly.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path, PurePosixPath

logger = logging.getLogger(__name__)


class StoreError(Exception):
    """Base error for the evidence store."""


class WriteConflict(StoreError):
    """A key was written twice with different content."""


class MissingKey(StoreError):
    """A key was read before being written."""


def _check_key(key: str) -> PurePosixPath:
    rel = PurePosixPath(key)
    if rel.is_absolute() or not key or any(part in ("..", "") for part in rel.parts):
        raise StoreError(f"invalid store key: {key!r}")
    return rel


class EvidenceStore:
    """Filesystem-backed, write-once key/value store."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / _check_key(key)

    def exists(self, key: str) -> bool:
        return self._path(key).is_file()

    def put_bytes(self, key: str, data: bytes) -> Path:
        path = self._path(key)
        if path.is_file():
            if path.read_bytes() == data:
                return path
            raise WriteConflict(f"key {key!r} already holds different content")
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
        return path

    def put_text(self, key: str, text: str) -> Path:
        return self.put_bytes(key, text.encode("utf-8"))

    def put_json(self, key: str, obj: object) -> Path:
        text = json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"
        return self.put_text(key, text)

    def get_bytes(self, key: str) -> bytes:
        path = self._path(key)
        if not path.is_file():
            raise MissingKey(f"no such key: {key!r}")
        return path.read_bytes()

    def get_text(self, key: str) -> str:
        return self.get_bytes(key).decode("utf-8")

    def get_json(self, key: str) -> object:
        return json.loads(self.get_text(key))

    def delete_prefix(self, prefix: str) -> int:
        """Invalidate partial work: remove every key under a prefix.

        Matches the exact key, keys below `prefix/`, and sibling files that
        extend the prefix with an extension (`prefix.json`).  This exists
        for one purpose: a resumed run clearing the incomplete evidence of
        a query it is about to redo.
        """
        _check_key(prefix)
        removed = 0
        for key in self.keys():
            if key == prefix or key.startswith(prefix + "/") or key.startswith(prefix + "."):
                (self.root / key).unlink()
                removed += 1
        return removed

    def keys(self) -> list[str]:
        """All written keys, sorted, as posix-style relative paths."""
        found = []
        for path in self.root.rglob("*"):
            if path.is_file() and not path.name.endswith(".tmp"):
                found.append(path.relative_to(self.root).as_posix())
        return sorted(found)
