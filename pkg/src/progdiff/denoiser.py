"""A small prunable noise-prediction MLP with explicit gradients.

The network maps ``concat(x_t, embed(t))`` through ``L`` SiLU hidden layers
to an ``input_dim`` noise estimate. Parameters are float32; every numerical
routine here is dtype-preserving so gradient checks can run on a float64
copy of the same parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .schedule import NoiseSchedule, forward_diffuse

__all__ = [
    "DenoiserSpec",
    "Parameters",
    "PruneMask",
    "Batch",
    "AdamState",
    "CheckpointError",
    "init_params",
    "time_embedding",
    "forward",
    "loss",
    "loss_and_grad",
    "grad",
    "adam_init",
    "adam_step",
    "layer_flops",
    "count_flops",
    "apply_mask",
    "save_checkpoint",
    "load_checkpoint",
]

DTYPE = np.float32
CKPT_MAGIC = b"PDIFFCK\x00"
CKPT_VERSION = 1


@dataclass(frozen=True)
class DenoiserSpec:
    input_dim: int
    hidden_widths: tuple
    time_embed_dim: int = 16

    def __post_init__(self):
        widths = tuple(int(w) for w in self.hidden_widths)
        object.__setattr__(self, "hidden_widths", widths)
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if len(widths) < 1 or min(widths) < 1:
            raise ValueError("need at least one hidden layer, all widths >= 1")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be a positive even number")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """``(in, out)`` for every affine layer, output layer last."""
        dims = [self.input_dim + self.time_embed_dim, *self.hidden_widths, self.input_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "time_embed_dim": self.time_embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserSpec":
        return cls(int(d["input_dim"]), tuple(d["hidden_widths"]), int(d["time_embed_dim"]))


@dataclass
class Parameters:
    """Weights ``(out, in)`` and biases ``(out,)`` per layer."""

    spec: DenoiserSpec
    weights: list
    biases: list

    def __post_init__(self):
        dims = self.spec.layer_dims
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ValueError("parameter count does not match spec")
        for l, (fan_in, fan_out) in enumerate(dims):
            if self.weights[l].shape != (fan_out, fan_in):
                raise ValueError(f"weight.{l} has shape {self.weights[l].shape}, expected {(fan_out, fan_in)}")
            if self.biases[l].shape != (fan_out,):
                raise ValueError(f"bias.{l} has shape {self.biases[l].shape}, expected {(fan_out,)}")

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"weight.{l}", w), (f"bias.{l}", b)]
        return out

    def copy(self) -> "Parameters":
        return Parameters(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "Parameters":
        return Parameters(self.spec, [w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    @property
    def n_params(self) -> int:
        return sum(t.size for _, t in self.named_tensors())

    def equals(self, other: "Parameters") -> bool:
        """Bitwise equality of spec and every tensor."""
        if self.spec != other.spec:
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.named_tensors(), other.named_tensors())
        )


@dataclass(frozen=True)
class PruneMask:
    """Sorted kept-channel indices for each hidden layer."""

    kept: tuple

    def __post_init__(self):
        object.__setattr__(self, "kept", tuple(tuple(sorted(int(j) for j in k)) for k in self.kept))

    @classmethod
    def full(cls, spec: DenoiserSpec) -> "PruneMask":
        return cls(tuple(tuple(range(w)) for w in spec.hidden_widths))

    @classmethod
    def from_removed(cls, spec: DenoiserSpec, removed: dict) -> "PruneMask":
        kept = []
        for l, w in enumerate(spec.hidden_widths):
            drop = set(removed.get(l, ()))
            kept.append(tuple(j for j in range(w) if j not in drop))
        return cls(tuple(kept))

    def validate(self, spec: DenoiserSpec) -> None:
        if len(self.kept) != len(spec.hidden_widths):
            raise ValueError(f"mask covers {len(self.kept)} layers, spec has {len(spec.hidden_widths)}")
        for l, (k, w) in enumerate(zip(self.kept, spec.hidden_widths)):
            if not k:
                raise ValueError(f"mask keeps no channel in hidden layer {l}")
            if len(set(k)) != len(k):
                raise ValueError(f"duplicate indices in hidden layer {l}")
            if k[0] < 0 or k[-1] >= w:
                raise ValueError(f"kept index out of range for hidden layer {l} (width {w})")

    def masked_spec(self, spec: DenoiserSpec) -> DenoiserSpec:
        self.validate(spec)
        return DenoiserSpec(spec.input_dim, tuple(len(k) for k in self.kept), spec.time_embed_dim)

    def compose(self, inner: "PruneMask") -> "PruneMask":
        """Mask equivalent to applying ``self`` and then ``inner`` (indexed into self)."""
        return PruneMask(tuple(tuple(a[j] for j in b) for a, b in zip(self.kept, inner.kept)))


class Batch(NamedTuple):
    x0: np.ndarray
    t: np.ndarray
    eps: np.ndarray

    @property
    def size(self) -> int:
        return int(self.x0.shape[0])


class AdamState(NamedTuple):
    m: list
    v: list
    step: int


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint; ``field`` names the failing part."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def init_params(spec: DenoiserSpec, seed: int) -> Parameters:
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(DTYPE))
        biases.append(np.zeros(fan_out, dtype=DTYPE))
    return Parameters(spec, weights, biases)


def time_embedding(t, T: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding; sin components first, then cos.

    Returns shape ``(dim,)`` for scalar ``t`` and ``(n, dim)`` for an array.
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr >= T):
        raise IndexError(f"timestep out of range [0, {T})")
    return _sinusoid(t_arr, dim)


def _sinusoid(t_arr: np.ndarray, dim: int) -> np.ndarray:
    omega = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    angles = np.multiply.outer(t_arr.astype(np.float64), omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _embed(spec: DenoiserSpec, t, n: int, dtype) -> np.ndarray:
    t_arr = np.asarray(t)
    if t_arr.ndim == 0:
        t_arr = np.full(n, int(t_arr))
    elif t_arr.shape != (n,):
        raise ValueError(f"expected {n} timesteps, got shape {t_arr.shape}")
    return _sinusoid(t_arr, spec.time_embed_dim).astype(dtype)


def _forward_cache(p: Parameters, x_t, t):
    dtype = p.weights[0].dtype
    x_t = np.asarray(x_t, dtype=dtype)
    single = x_t.ndim == 1
    if single:
        x_t = x_t[None, :]
    if x_t.shape[1] != p.spec.input_dim:
        raise ValueError(f"x_t has dimension {x_t.shape[1]}, model expects {p.spec.input_dim}")
    h = np.concatenate([x_t, _embed(p.spec, t, x_t.shape[0], dtype)], axis=1)
    inputs, pre = [], []
    L = len(p.weights)
    for l in range(L):
        inputs.append(h)
        z = h @ p.weights[l].T + p.biases[l]
        if l < L - 1:
            pre.append(z)
            h = z * expit(z)
        else:
            h = z
    return h, inputs, pre, single


def forward(p: Parameters, x_t, t) -> np.ndarray:
    """Predicted noise for ``x_t`` at timestep(s) ``t``."""
    out, _, _, single = _forward_cache(p, x_t, t)
    return out[0] if single else out


def _noised(p: Parameters, batch: Batch, s: NoiseSchedule):
    if batch.size == 0:
        raise ValueError("empty batch")
    return forward_diffuse(batch.x0, batch.t, batch.eps, s)


def loss(p: Parameters, batch: Batch, s: NoiseSchedule) -> float:
    """Mean squared error between true and predicted noise."""
    eps_hat = forward(p, _noised(p, batch, s), batch.t)
    diff = eps_hat - np.asarray(batch.eps, dtype=eps_hat.dtype)
    return float(np.mean(diff * diff))


def loss_and_grad(p: Parameters, batch: Batch, s: NoiseSchedule) -> tuple[float, Parameters]:
    x_t = _noised(p, batch, s)
    out, inputs, pre, _ = _forward_cache(p, x_t, batch.t)
    diff = out - np.asarray(batch.eps, dtype=out.dtype)
    value = float(np.mean(diff * diff))
    delta = (2.0 / diff.size) * diff
    L = len(p.weights)
    gw, gb = [None] * L, [None] * L
    for l in range(L - 1, -1, -1):
        gw[l] = delta.T @ inputs[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            z = pre[l - 1]
            sig = expit(z)
            delta = (delta @ p.weights[l]) * (sig * (1 + z * (1 - sig)))
    return value, Parameters(p.spec, gw, gb)


def grad(p: Parameters, batch: Batch, s: NoiseSchedule) -> Parameters:
    """Exact gradient of :func:`loss` for every weight and bias."""
    return loss_and_grad(p, batch, s)[1]


def adam_init(p: Parameters) -> AdamState:
    return AdamState([np.zeros_like(t) for _, t in p.named_tensors()],
                     [np.zeros_like(t) for _, t in p.named_tensors()], 0)


def adam_step(p: Parameters, grads: Parameters, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
    """One bias-corrected Adam update; returns new ``(Parameters, AdamState)``."""
    step = state.step + 1
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    new_tensors, new_m, new_v = [], [], []
    for (_, w), (_, g), m, v in zip(p.named_tensors(), grads.named_tensors(), state.m, state.v):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        upd = lr * (m / c1) / (np.sqrt(v / c2) + epsilon)
        new_tensors.append((w - upd).astype(w.dtype, copy=False))
        new_m.append(m.astype(w.dtype, copy=False))
        new_v.append(v.astype(w.dtype, copy=False))
    return (Parameters(p.spec, new_tensors[0::2], new_tensors[1::2]), AdamState(new_m, new_v, step))


def layer_flops(fan_in: int, fan_out: int, hidden: bool) -> int:
    """FLOPs of one affine layer: MAC = 2 FLOPs, +1 per bias, +4 per SiLU."""
    return 2 * fan_in * fan_out + fan_out + (4 * fan_out if hidden else 0)


def count_flops(spec: DenoiserSpec, mask: PruneMask | None = None) -> int:
    """FLOPs per single-sample forward evaluation (time embedding excluded)."""
    if mask is not None:
        spec = mask.masked_spec(spec)
    dims = spec.layer_dims
    return sum(layer_flops(i, o, l < len(dims) - 1) for l, (i, o) in enumerate(dims))


def apply_mask(p: Parameters, mask: PruneMask) -> Parameters:
    """Drop pruned hidden channels: their rows (and biases) and downstream columns."""
    spec = mask.masked_spec(p.spec)
    weights = [w.copy() for w in p.weights]
    biases = [b.copy() for b in p.biases]
    for l, kept in enumerate(mask.kept):
        idx = np.asarray(kept, dtype=np.int64)
        weights[l] = weights[l][idx, :]
        biases[l] = biases[l][idx]
        weights[l + 1] = weights[l + 1][:, idx]
    return Parameters(spec, [np.ascontiguousarray(w) for w in weights], biases)


def save_checkpoint(p: Parameters, spec: DenoiserSpec | None, path, extra: dict | None = None) -> None:
    """Write magic, version, a JSON manifest and little-endian float32 tensors."""
    spec = spec or p.spec
    if spec != p.spec:
        raise ValueError("spec does not describe these parameters")
    tensors, offset = [], 0
    blobs = []
    for name, t in p.named_tensors():
        data = np.ascontiguousarray(t, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    manifest = json.dumps({"spec": spec.to_dict(), "tensors": tensors, "extra": extra or {}},
                          sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path, with_extra: bool = False):
    """Read a checkpoint; returns ``(Parameters, DenoiserSpec)`` (plus extra dict)."""
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError("magic", f"bad magic {raw[:8]!r}")
    if len(raw) < 20:
        raise CheckpointError("version", "header truncated")
    version, mlen = struct.unpack("<IQ", raw[8:20])
    if version != CKPT_VERSION:
        raise CheckpointError("version", f"unsupported version {version}")
    if 20 + mlen > len(raw):
        raise CheckpointError("manifest", "manifest truncated")
    try:
        manifest = json.loads(raw[20:20 + mlen])
        spec = DenoiserSpec.from_dict(manifest["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError("manifest", f"unreadable manifest ({exc})") from exc
    data = raw[20 + mlen:]
    expected = {}
    for l, (fan_in, fan_out) in enumerate(spec.layer_dims):
        expected[f"weight.{l}"] = (fan_out, fan_in)
        expected[f"bias.{l}"] = (fan_out,)
    found = {}
    for entry in manifest.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise CheckpointError(f"{name}.shape", f"shape {shape} does not match spec {expected.get(name)}")
        start, nbytes = int(entry["offset"]), int(entry["nbytes"])
        if nbytes != 4 * int(np.prod(shape)) or start + nbytes > len(data):
            raise CheckpointError(f"{name}.shape", f"tensor data truncated (need {nbytes} bytes at {start}, "
                                                   f"file has {len(data)})")
        found[name] = np.frombuffer(data, dtype="<f4", count=int(np.prod(shape)), offset=start) \
            .reshape(shape).astype(DTYPE)
    missing = set(expected) - set(found)
    if missing:
        raise CheckpointError(f"{sorted(missing)[0]}.shape", "tensor missing from checkpoint")
    L = len(spec.layer_dims)
    p = Parameters(spec, [found[f"weight.{l}"] for l in range(L)], [found[f"bias.{l}"] for l in range(L)])
    if with_extra:
        return p, spec, manifest.get("extra", {})
    return p, spec
