"""Result persistence: run directories, JSON/CSV writers and the MANIFEST.

Everything written here is byte-deterministic given the same inputs.
Wall-clock quantities go to ``runtime.json``, which the MANIFEST skips
together with ``config.echo.json``, so repeated runs produce identical
MANIFEST hashes.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import os
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__

RESULTS_ENV = "KCM_RESULTS_DIR"
DEFAULT_ROOT = "results"
# config.echo.json records thread count and output root, which may differ
# between otherwise identical runs.
UNHASHED = frozenset({"MANIFEST", "runtime.json", "config.echo.json"})


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(obj, float) or isinstance(obj, np.floating):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, default=_default) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def metadata(model=None, seed=None, horizon=None, **extra) -> dict:
    meta = {"code_version": __version__, "seed": seed, "horizon": horizon}
    if model is not None:
        meta.update(model=model.constraints.kind, p=model.p, d=model.geometry.d,
                    n=model.geometry.n, model_hash=model.model_hash())
    meta.update(extra)
    return meta


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], meta: Mapping | None = None) -> Path:
    """CSV with an optional first line ``# {json metadata}``."""
    path = Path(path)
    buf = io.StringIO()
    if meta is not None:
        buf.write("# " + json.dumps(_clean(meta), sort_keys=True, default=_default) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def results_root(configured=None) -> Path:
    """``$KCM_RESULTS_DIR`` if set, else ``configured``, else ``./results``."""
    env = os.environ.get(RESULTS_ENV)
    return Path(env or configured or DEFAULT_ROOT)


def make_run_dir(root, study: str, seed) -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    base = Path(root) / f"{study}_{stamp}_seed{seed}"
    path = base
    k = 1
    while path.exists():
        path = Path(f"{base}_{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir) -> Path:
    """``MANIFEST``: one ``<sha256>  <relative path>`` line per artifact."""
    run_dir = Path(run_dir)
    lines = []
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name not in UNHASHED:
            lines.append(f"{sha256_file(p)}  {p.relative_to(run_dir).as_posix()}")
    out = run_dir / "MANIFEST"
    out.write_text("\n".join(lines) + ("\n" if lines else ""))
    return out


def read_manifest(run_dir) -> dict[str, str]:
    text = (Path(run_dir) / "MANIFEST").read_text()
    out = {}
    for line in text.splitlines():
        digest, name = line.split("  ", 1)
        out[name] = digest
    return out
