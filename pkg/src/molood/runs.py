"""Run directories: lock files, manifests and hash verification.

A manifest records the command, the config snapshot, the seed, content
hashes of inputs and of every output file, and per-phase timings. Outputs
are hashed from the bytes on disk, so replaying a run and comparing the
``outputs`` maps checks reproducibility.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .errors import ManifestMismatch, RunLocked
from .io import atomic_write, dump_json, sha256_file

MANIFEST = "manifest.json"
LOCK = ".lock"


@contextmanager
def run_lock(run_dir: str | Path):
    """Exclusive lock on a run directory for the duration of one command."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLocked(f"{run_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield run_dir
    finally:
        lock.unlink(missing_ok=True)


def write_manifest(run_dir: str | Path, command: str, config: dict, seed: int, inputs: dict,
                   outputs: list[str], timings: dict, extra: dict | None = None) -> dict:
    run_dir = Path(run_dir)
    manifest = {
        "command": command,
        "code_version": __version__,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": {name: sha256_file(run_dir / name) for name in sorted(outputs)},
        "timings": {k: round(float(v), 3) for k, v in timings.items()},
        **(extra or {}),
    }
    atomic_write(run_dir / MANIFEST, dump_json(manifest))
    return manifest


def read_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / MANIFEST
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestMismatch(f"cannot read manifest {path}: {exc}") from exc


def verify_manifest(run_dir: str | Path) -> dict:
    """Every listed output exists and hash-matches; returns the manifest."""
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    for name, digest in manifest.get("outputs", {}).items():
        path = run_dir / name
        if not path.exists():
            raise ManifestMismatch(f"{path} listed in the manifest is missing")
        if sha256_file(path) != digest:
            raise ManifestMismatch(f"{path} does not match its manifest hash")
    return manifest


def manifest_digest(run_dir: str | Path) -> str:
    return sha256_file(Path(run_dir) / MANIFEST)
