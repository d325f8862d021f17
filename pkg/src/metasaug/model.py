"""Rectifier MLP feature extractor with a linear classifier head.

Parameters live in an ordered ``dict[str, ndarray]``:
``hidden.{i}.weight`` (out x in), ``hidden.{i}.bias``, then ``fc.weight``
(C x d, row c is the class-c weight vector) and ``fc.bias``. With no hidden
layers the extractor is the identity and features equal inputs.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParseError

HEAD = ("fc.weight", "fc.bias")
CHECKPOINT_FORMAT = "metasaug-f64"


def init_params(input_dim, num_classes, rng, hidden=()):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    params = {}
    sizes = [input_dim, *hidden, num_classes]
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        name = "fc" if i == len(sizes) - 2 else f"hidden.{i}"
        params[f"{name}.weight"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"{name}.bias"] = np.zeros(fan_out)
    return params


def num_hidden(params):
    return sum(1 for k in params if k.startswith("hidden.") and k.endswith(".weight"))


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre_activations: list
    activations: list
    features: np.ndarray
    logits: np.ndarray


def extract_features(params, x):
    return forward(params, x).features


def forward(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"inputs must be 2-D, got {x.shape}")
    h = x
    pre, act = [], []
    for i in range(num_hidden(params)):
        w = params[f"hidden.{i}.weight"]
        if h.shape[1] != w.shape[1]:
            raise DimensionError(f"layer {i} expects {w.shape[1]} inputs, got {h.shape[1]}")
        z = h @ w.T + params[f"hidden.{i}.bias"]
        pre.append(z)
        h = np.maximum(z, 0.0)
        act.append(h)
    w = params["fc.weight"]
    if h.shape[1] != w.shape[1]:
        raise DimensionError(f"classifier expects {w.shape[1]} features, got {h.shape[1]}")
    logits = h @ w.T + params["fc.bias"]
    return ForwardTrace(x, pre, act, h, logits)


def backward(params, trace, dlogits, dfeatures=None):
    """Reverse-mode gradients of a scalar loss given dL/dlogits.

    ``dfeatures`` adds an extra gradient arriving at the features directly.
    """
    g = np.asarray(dlogits, dtype=np.float64)
    if g.shape != trace.logits.shape:
        raise DimensionError(f"dlogits shape {g.shape} != logits shape {trace.logits.shape}")
    grads = {
        "fc.weight": g.T @ trace.features,
        "fc.bias": g.sum(axis=0),
    }
    nh = num_hidden(params)
    if nh == 0:
        return grads
    dh = g @ params["fc.weight"]
    if dfeatures is not None:
        dh = dh + dfeatures
    for i in reversed(range(nh)):
        dz = dh * (trace.pre_activations[i] > 0.0)
        below = trace.activations[i - 1] if i > 0 else trace.inputs
        grads[f"hidden.{i}.weight"] = dz.T @ below
        grads[f"hidden.{i}.bias"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ params[f"hidden.{i}.weight"]
    return {k: grads[k] for k in params}


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict = field(default_factory=dict)


def sgd_step(params, grads, state):
    """Heavy-ball SGD on the parameters present in ``grads``.

    v <- m*v + grad + wd*param;  param <- param - lr*v.  Returns new params;
    velocities in ``state`` advance in place.
    """
    out = dict(params)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        step = g + state.weight_decay * p
        v = state.velocity.get(name)
        v = step if v is None else state.momentum * v + step
        state.velocity[name] = v
        out[name] = p - state.lr * v
    return out


def save_tensors(path, tensors, meta=None):
    """Write ``<path>.bin`` (little-endian float64, concatenated in order) and a
    ``<path>.json`` sidecar listing name/shape/offset/count per tensor."""
    path = Path(path)
    entries, offset = [], 0
    chunks = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += int(arr.size)
        chunks.append(arr.ravel())
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    bin_path = path.with_suffix(".bin")
    bin_path.write_bytes(blob.astype("<f8").tobytes())
    sidecar = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "dtype": "float64",
        "byteorder": "little",
        "binary": bin_path.name,
        "tensors": entries,
        "meta": meta or {},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    return bin_path, path.with_suffix(".json")


def load_tensors(path):
    """Inverse of :func:`save_tensors`; returns ``(tensors, meta)``."""
    path = Path(path)
    side_path = path.with_suffix(".json")
    if not side_path.exists():
        raise FileNotFoundError(f"checkpoint sidecar {side_path} not found")
    sidecar = json.loads(side_path.read_text())
    if sidecar.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{side_path} is not a {CHECKPOINT_FORMAT} checkpoint")
    blob = np.frombuffer((side_path.parent / sidecar["binary"]).read_bytes(), dtype="<f8")
    tensors = {}
    for e in sidecar["tensors"]:
        chunk = blob[e["offset"] : e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise ParseError(f"tensor {e['name']} truncated in {sidecar['binary']}")
        tensors[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return tensors, sidecar.get("meta", {})
