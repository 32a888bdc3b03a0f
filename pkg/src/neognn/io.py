"""Small file helpers: atomic writes, score files, flat config files."""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError


def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def format_scores(pairs, scores):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return "".join(f"{u} {v} {s!r}\n" for (u, v), s in zip(pairs.tolist(), np.asarray(scores).tolist()))


def read_scores(path):
    """Parse ``u v score`` lines into ``{(u, v): score}`` (both orientations)."""
    out = {}
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read file: {exc.strerror}", str(path)) from exc
    for lineno, raw in enumerate(lines, start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 3:
            raise DataError(f"expected 'u v score', got {s!r}", str(path), lineno)
        try:
            u, v, score = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise DataError(f"cannot parse {s!r}", str(path), lineno) from None
        out[(u, v)] = score
        out.setdefault((v, u), score)
    return out


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment line."""
    conf = {}
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read file: {exc.strerror}", str(path)) from exc
    for lineno, raw in enumerate(lines, start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise DataError(f"expected 'key = value', got {s!r}", str(path), lineno)
        key, value = (x.strip() for x in s.split("=", 1))
        conf[key.replace("-", "_")] = value
    return conf


def read_features(path, num_nodes=None):
    """Whitespace-separated feature matrix, one row per node."""
    try:
        x = np.loadtxt(path, dtype=np.float64, ndmin=2, comments="#")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read feature matrix: {exc}", str(path)) from exc
    if num_nodes is not None and x.shape[0] != num_nodes:
        raise DataError(f"feature matrix has {x.shape[0]} rows, expected {num_nodes}", str(path))
    return x
