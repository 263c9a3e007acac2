"""File formats: model snapshots and flat key=value run configs.

A model file is one line of JSON (shapes, seed, config hash, element
count) followed by the raw little-endian float64 parameter vector.
Configs are flat ``key=value`` text, one pair per line, ``#`` comments
allowed; the canonical echo of a resolved config doubles as the input
to the config hash.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .params import FlatParams

MODEL_KIND = "parle-model"
MODEL_VERSION = 1


def save_model(path, params: FlatParams, seed: int, config_hash: str = "") -> None:
    header = {
        "kind": MODEL_KIND,
        "version": MODEL_VERSION,
        "count": params.size,
        "shapes": [list(s) for s in params.shapes],
        "seed": int(seed),
        "config_hash": config_hash,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(params.data.astype("<f8").tobytes())


def load_model(path) -> tuple[FlatParams, dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataFormatError(f"{path}: missing model header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: bad model header: {e}") from e
    if header.get("kind") != MODEL_KIND:
        raise DataFormatError(f"{path}: not a model file")
    count = int(header["count"])
    body = raw[nl + 1 :]
    if len(body) != 8 * count:
        raise DataFormatError(
            f"{path}: expected {8 * count} payload bytes, found {len(body)}"
        )
    data = np.frombuffer(body, dtype="<f8").astype(np.float64)
    shapes = tuple(tuple(s) for s in header.get("shapes", []))
    return FlatParams(data, shapes), header


# ---------------------------------------------------------------------------
# Flat key=value configs


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat key=value lines; blank lines and # comments are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def canonical_config_text(values: dict) -> str:
    """Sorted key=value lines; the reproducibility echo and hash input."""
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


def config_hash(values: dict) -> str:
    return hashlib.sha256(canonical_config_text(values).encode("utf-8")).hexdigest()
