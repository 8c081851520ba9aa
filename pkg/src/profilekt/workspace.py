"""Workspace layout, the single-command lock and per-command manifests."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import platform
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__

SUBDIRS = ("raw", "splits", "profiles", "models", "traces", "reports")
LOCK_NAME = ".lock"


class MissingArtifact(FileNotFoundError):
    pass


class WorkspaceLocked(RuntimeError):
    pass


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def versions() -> dict:
    return {"profilekt": __version__, "python": platform.python_version(), "numpy": np.__version__}


class Workspace:
    def __init__(self, root: Path | str):
        self.root = Path(root)

    def __getattr__(self, name: str) -> Path:
        if name in SUBDIRS:
            return self.root / name
        raise AttributeError(name)

    @property
    def manifests(self) -> Path:
        return self.reports / "manifests"

    def init(self) -> None:
        for d in SUBDIRS:
            (self.root / d).mkdir(parents=True, exist_ok=True)

    def rel(self, path: Path) -> str:
        try:
            return Path(path).resolve().relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return str(path)

    def require(self, path: Path, command: str) -> Path:
        if not Path(path).exists():
            raise MissingArtifact(f"{self.rel(path)} not found in workspace {self.root}; "
                                  f"run `profilekt {command}` first")
        return Path(path)

    @contextmanager
    def lock(self, command: str):
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / LOCK_NAME
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = path.read_text(encoding="utf-8", errors="replace").strip() if path.exists() else "?"
            raise WorkspaceLocked(f"workspace {self.root} is locked by another command ({holder}); "
                                  f"delete {path} if that command is no longer running") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{command} pid={os.getpid()}\n")
        try:
            yield
        finally:
            path.unlink(missing_ok=True)

    def write_manifest(self, command: str, config, inputs: list[Path], outputs: list[Path],
                       stats: dict | None = None) -> Path:
        manifest = {
            "command": command,
            "config_sha256": config.digest(),
            "config": config.to_dict(),
            "inputs": {self.rel(p): sha256_file(p) for p in sorted(inputs, key=str)},
            "outputs": {self.rel(p): sha256_file(p) for p in sorted(outputs, key=str)},
            "versions": versions(),
            "stats": stats or {},
            "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        }
        return write_text(self.manifests / f"{command}.json", json.dumps(manifest, sort_keys=True, indent=1) + "\n")
