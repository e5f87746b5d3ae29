"""Plain key=value text files with # comments.

Used for generator configs, dataset manifests, and checkpoint
manifests. Keys keep file order; values are strings (callers parse).
Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import os


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise IOError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, value = stripped.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_kv(path: str | os.PathLike, items: dict[str, str], header: str | None = None) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for key, value in items.items():
            fh.write(f"{key}={value}\n")
    os.replace(tmp, path)
