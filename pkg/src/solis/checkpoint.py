"""JSON checkpoints: architecture, weights, optimiser moments, RNG state and epoch.

Arrays are stored as ``{"__array__": shape, "data": [...]}`` with floats
written by ``json`` (shortest round-trip repr), so loading is bit-exact.
"""

import json
from pathlib import Path

import numpy as np

from .exceptions import ArtifactMismatchError, ParseError

FORMAT = "solis-checkpoint/1"


def encode(obj):
    if isinstance(obj, np.ndarray):
        return {"__array__": list(obj.shape), "data": obj.astype(float).ravel().tolist()}
    if isinstance(obj, dict):
        return {str(k): encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def decode(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["data"], dtype=float).reshape(obj["__array__"])
        return {k: decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [decode(v) for v in obj]
    return obj


def save_checkpoint(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"format": FORMAT, **encode(payload)}
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"checkpoint {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint {path} is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if doc.get("format") != FORMAT:
        raise ParseError(f"{path} is not a checkpoint of format {FORMAT}")
    return decode(doc)


def check_compatible(checkpoint, dataset):
    """Refuse to pair a model with data generated under a different configuration."""
    want = checkpoint.get("dataset_hash")
    if want and dataset.dataset_hash != want:
        raise ArtifactMismatchError(
            f"dataset hash {dataset.dataset_hash or '<none>'} does not match the checkpoint's "
            f"training data ({want})")
