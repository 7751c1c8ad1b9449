"""Versioned, human-readable model files.

Layout: a one-line header ``arn-model <version> sha256:<hex>`` followed by a
JSON body holding the network config, free-form run metadata and one line per
node.  The digest covers the body bytes, so any edited or corrupted byte is
caught before parsing.  Floats are written with ``repr`` and read back
bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import HashMismatchError, ModelFormatError, StructuralError, VersionError
from .graph import Layer
from .vision import Network, NetworkConfig

FORMAT_NAME = "arn-model"
FORMAT_VERSION = 1

_LAYER_PARAMS = (
    "arity", "threshold", "default_rho", "tuning", "wired", "saturating", "pixel_floor",
    "n_min", "rho_min", "rho_max", "sigma_floor", "relax_factor", "tie_eps",
)


def _layer_params(layer: Layer) -> dict:
    params = {k: getattr(layer, k) for k in _LAYER_PARAMS}
    params["tuning"] = layer.tuning.value
    return params


def _node_record(layer: Layer, i: int) -> dict:
    rec = {
        "id": i,
        "label": None if layer.labels[i] < 0 else int(layer.labels[i]),
        "hit_count": int(layer.hit_counts[i]),
        "center": layer.centers[i].tolist(),
        "rho": layer.rhos[i].tolist(),
        "mean": layer.stat_mean[i].tolist(),
        "m2": layer.stat_m2[i].tolist(),
    }
    if layer.pixel_floor is not None:
        rec["kept"] = np.flatnonzero(layer.masks[i]).tolist()
    if layer.wired:
        rec["sources"] = layer.sources[i].tolist()
    return rec


def _layer_text(name: str, layer: Layer) -> str:
    nodes = ",\n".join("    " + json.dumps(_node_record(layer, i)) for i in range(len(layer)))
    params = json.dumps(_layer_params(layer), sort_keys=True)
    return f'  "{name}": {{"params": {params}, "nodes": [\n{nodes}\n  ]}}'


def dumps_model(network: Network, metadata: Optional[dict] = None) -> str:
    body = "{\n" + ",\n".join(
        [
            f'  "format": "{FORMAT_NAME}"',
            f'  "format_version": {FORMAT_VERSION}',
            f'  "config": {json.dumps(network.config.to_dict(), sort_keys=True)}',
            f'  "metadata": {json.dumps(metadata or {}, sort_keys=True)}',
            _layer_text("l1", network.l1),
            _layer_text("l2", network.l2),
        ]
    ) + "\n}\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    return f"{FORMAT_NAME} {FORMAT_VERSION} sha256:{digest}\n{body}"


def save_model(network: Network, path: str | Path, metadata: Optional[dict] = None) -> Path:
    """Write atomically: the file either appears complete or not at all."""
    path = Path(path)
    text = dumps_model(network, metadata)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _restore_layer(layer: Layer, data: dict) -> None:
    params = data["params"]
    for key in _LAYER_PARAMS:
        current = _layer_params(layer)[key]
        if params[key] != current:
            raise ModelFormatError(f"layer parameter {key}={params[key]!r} disagrees with config ({current!r})")
    nodes = data["nodes"]
    n, d = len(nodes), layer.arity
    mask = np.ones((n, d), dtype=bool)
    sources = np.zeros((n, d), dtype=np.int64)
    for i, rec in enumerate(nodes):
        if rec["id"] != i:
            raise ModelFormatError(f"node record {i} carries id {rec['id']}")
        if "kept" in rec:
            mask[i] = False
            mask[i, rec["kept"]] = True
        if layer.wired:
            sources[i] = rec["sources"]
    layer.restore(
        centers=np.array([r["center"] for r in nodes], dtype=float).reshape(n, d),
        rhos=np.array([r["rho"] for r in nodes], dtype=float).reshape(n, d),
        masks=mask,
        sources=sources,
        labels=np.array([-1 if r["label"] is None else r["label"] for r in nodes], dtype=np.int64),
        hit_counts=np.array([r["hit_count"] for r in nodes], dtype=np.int64),
        stat_mean=np.array([r["mean"] for r in nodes], dtype=float).reshape(n, d),
        stat_m2=np.array([r["m2"] for r in nodes], dtype=float).reshape(n, d),
    )


def loads_model(raw: bytes | str) -> tuple[Network, dict]:
    if isinstance(raw, str):
        raw = raw.encode()
    head, _, body = raw.partition(b"\n")
    header = head.decode("ascii", errors="replace")
    parts = header.split(" ")
    if len(parts) != 3 or parts[0] != FORMAT_NAME or not parts[2].startswith("sha256:"):
        raise ModelFormatError(f"not an {FORMAT_NAME} file (header {header[:60]!r})")
    try:
        version = int(parts[1])
    except ValueError:
        raise ModelFormatError(f"format version {parts[1]!r} is not an integer") from None
    if version != FORMAT_VERSION:
        raise VersionError(f"model file has format version {version}, this build reads version {FORMAT_VERSION}")
    expected = parts[2][len("sha256:"):]
    actual = hashlib.sha256(body).hexdigest()
    if actual != expected:
        raise HashMismatchError(f"content hash {actual} does not match recorded {expected}")
    try:
        data = json.loads(body)
        if data["format_version"] != version:
            raise VersionError(f"body version {data['format_version']} disagrees with header version {version}")
        network = Network(NetworkConfig.from_dict(data["config"]))
        _restore_layer(network.l1, data["l1"])
        _restore_layer(network.l2, data["l2"])
        metadata = data["metadata"]
    except (KeyError, TypeError, ValueError, StructuralError) as exc:
        raise ModelFormatError(f"malformed model file: {exc!r}") from exc
    return network, metadata


def load_model(path: str | Path) -> tuple[Network, dict]:
    return loads_model(Path(path).read_bytes())
