"""A small fixed-topology MLP engine: affine layers, exact backprop, Adam.

Batches are row-major: an input batch is (B, fan_in) and a layer computes
``act(x @ W.T + b)`` with ``W`` of shape (fan_out, fan_in).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PreconditionError, StaleCacheError

ACTIVATIONS = ("relu", "sigmoid", "linear")
CHECKPOINT_MAGIC = b"BVAECKPT"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class LayerParams:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "linear"
    trainable: bool = True
    version: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise PreconditionError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise PreconditionError(
                f"weights {self.weights.shape} and bias {self.bias.shape} do not match"
            )

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.bias.copy(), self.activation, self.trainable)


def he_init(fan_in: int, fan_out: int, rng: np.random.Generator,
            activation: str = "relu", trainable: bool = True) -> LayerParams:
    """Weights ~ N(0, 2/fan_in), zero bias."""
    if fan_in < 1 or fan_out < 1:
        raise PreconditionError(f"layer dims must be positive, got {fan_in} -> {fan_out}")
    W = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
    return LayerParams(W, np.zeros(fan_out), activation, trainable)


def _activate(a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(a, 0.0)
    if activation == "sigmoid":
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out
    return a


@dataclass
class ForwardCache:
    layer_ids: tuple[int, ...]
    versions: tuple[int, ...]
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    outputs: list[np.ndarray]


def forward(layers, x) -> tuple[np.ndarray, ForwardCache]:
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2:
        raise PreconditionError(f"input batch must be 2-d, got shape {h.shape}")
    inputs, preacts, outputs = [], [], []
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.fan_in:
            raise PreconditionError(
                f"layer {i} expects {layer.fan_in} inputs, got {h.shape[1]}"
            )
        inputs.append(h)
        a = h @ layer.weights.T + layer.bias
        h = _activate(a, layer.activation)
        preacts.append(a)
        outputs.append(h)
    cache = ForwardCache(
        layer_ids=tuple(id(l) for l in layers),
        versions=tuple(l.version for l in layers),
        inputs=inputs, preacts=preacts, outputs=outputs,
    )
    return h, cache


def backward(layers, cache: ForwardCache, grad_output, wrt_preactivation: bool = False):
    """Reverse pass through ``layers``.

    ``grad_output`` is dLoss/d(output) or, with ``wrt_preactivation``, the
    gradient with respect to the last layer's pre-activation (useful when
    the loss is fused with a final sigmoid).  Returns ``(grads, grad_input)``
    where ``grads[i]`` is ``(dW, db)`` or ``None`` for frozen layers.
    """
    if (cache.layer_ids != tuple(id(l) for l in layers)
            or cache.versions != tuple(l.version for l in layers)):
        raise StaleCacheError("forward cache does not match the current layer parameters")
    g = np.asarray(grad_output, dtype=np.float64)
    grads: list = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        if not (wrt_preactivation and i == len(layers) - 1):
            if layer.activation == "relu":
                g = g * (cache.preacts[i] > 0)
            elif layer.activation == "sigmoid":
                s = cache.outputs[i]
                g = g * s * (1.0 - s)
        if layer.trainable:
            grads[i] = (g.T @ cache.inputs[i], g.sum(axis=0))
        g = g @ layer.weights
    return grads, g


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(layers, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    m = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) if l.trainable else None for l in layers]
    v = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) if l.trainable else None for l in layers]
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0, m=m, v=v)


def adam_step(state: AdamState, layers, grads) -> None:
    """One bias-corrected Adam update, in place.  Frozen layers are skipped."""
    if len(layers) != len(grads) or len(layers) != len(state.m):
        raise PreconditionError("layers, gradients and optimizer state disagree in length")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    step_size = state.lr / (1.0 - b1 ** t)
    inv_sqrt_c2 = 1.0 / np.sqrt(1.0 - b2 ** t)
    for layer, g, m, v in zip(layers, grads, state.m, state.v):
        if not layer.trainable or g is None:
            continue
        for param, gp, mp, vp in zip((layer.weights, layer.bias), g, m, v):
            mp *= b1
            mp += (1.0 - b1) * gp
            vp *= b2
            tmp = np.multiply(gp, gp)
            tmp *= 1.0 - b2
            vp += tmp
            # lr * mhat / (sqrt(vhat) + eps), reusing one scratch buffer
            np.sqrt(vp, out=tmp)
            tmp *= inv_sqrt_c2
            tmp += state.eps
            np.divide(mp, tmp, out=tmp)
            tmp *= step_size
            param -= tmp
        layer.version += 1


def save_checkpoint(path, groups: dict, extra: dict | None = None) -> None:
    """Write named layer groups as ``magic | u64 header length | JSON | fp64 LE blob``.

    Offsets in the header count float64 elements from the start of the blob.
    """
    specs = []
    chunks = []
    offset = 0
    for name, layers in groups.items():
        for idx, layer in enumerate(layers):
            n_w = layer.weights.size
            n_b = layer.bias.size
            specs.append({
                "group": name, "index": idx,
                "fan_in": layer.fan_in, "fan_out": layer.fan_out,
                "activation": layer.activation, "trainable": layer.trainable,
                "weights_offset": offset, "bias_offset": offset + n_w,
            })
            chunks.append(np.ascontiguousarray(layer.weights, dtype="<f8").ravel())
            chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").ravel())
            offset += n_w + n_b
    header = json.dumps({"version": CHECKPOINT_VERSION, "layers": specs, "extra": extra or {},
                         "total": offset}, sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c.tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise PreconditionError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    blob = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    if blob.size != header["total"]:
        raise PreconditionError(f"checkpoint blob has {blob.size} values, header says {header['total']}")
    groups: dict = {}
    for s in header["layers"]:
        w = blob[s["weights_offset"]: s["weights_offset"] + s["fan_in"] * s["fan_out"]]
        b = blob[s["bias_offset"]: s["bias_offset"] + s["fan_out"]]
        layer = LayerParams(w.reshape(s["fan_out"], s["fan_in"]).astype(np.float64),
                            b.astype(np.float64), s["activation"], s["trainable"])
        groups.setdefault(s["group"], []).append(layer)
    return groups, header["extra"]
