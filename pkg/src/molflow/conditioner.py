"""Gated dilated causal convolution conditioner, parameter storage and checkpoints.

Layout is (batch, time, channels). The network output at step ``t`` depends on
input steps ``t - (kernel_size - 1) * sum(dilations)`` .. ``t - 1`` only: the
first layer uses strictly-past taps, later layers include the current step of
their own (already shifted) input.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .distributions import SCALE_FLOOR
from .errors import CheckpointError, ShapeError

AFFINE = "affine"
NON_AFFINE = "non-affine"
KINDS = (AFFINE, NON_AFFINE)

LOG_SCALE_FLOOR = float(np.log(SCALE_FLOOR))


@dataclass(frozen=True)
class ConditionerConfig:
    layers: int = 3
    channels: int = 16
    kernel_size: int = 2
    dilation_cycle: int = 10
    n_mixtures: int = 10
    kind: str = NON_AFFINE
    cond_channels: int = 2

    def __post_init__(self):
        if self.layers < 1 or self.channels < 1 or self.kernel_size < 2 \
                or self.dilation_cycle < 1 or self.n_mixtures < 1 or self.cond_channels < 0:
            raise ValueError(f"invalid conditioner config: {self}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")

    @property
    def dilations(self):
        return [2 ** (i % self.dilation_cycle) for i in range(self.layers)]

    @property
    def receptive_field(self):
        return (self.kernel_size - 1) * sum(self.dilations)

    @property
    def n_outputs(self):
        return 2 if self.kind == AFFINE else 2 + 3 * self.n_mixtures


class ParamVector:
    """Flat float64 vector with named, shaped slices."""

    def __init__(self, shapes, data=None):
        self.slices = {}
        offset = 0
        for name, shape in shapes.items():
            shape = tuple(int(n) for n in shape)
            self.slices[name] = (offset, shape)
            offset += int(np.prod(shape))
        if data is None:
            data = np.zeros(offset)
        data = np.asarray(data, dtype=np.float64)
        if data.shape != (offset,):
            raise ShapeError(f"parameter data has shape {data.shape}, expected ({offset},)")
        self.data = data

    @property
    def names(self):
        return list(self.slices)

    @property
    def shapes(self):
        return {k: shape for k, (_, shape) in self.slices.items()}

    def __len__(self):
        return self.data.size

    def __getitem__(self, name):
        offset, shape = self.slices[name]
        return self.data[offset:offset + int(np.prod(shape))].reshape(shape)

    def __setitem__(self, name, value):
        self[name][...] = value

    def __contains__(self, name):
        return name in self.slices

    def copy(self):
        return ParamVector(self.shapes, self.data.copy())

    def like(self, data):
        return ParamVector(self.shapes, data)

    def as_dict(self):
        return {name: self[name] for name in self.slices}

    def merged(self, other):
        shapes = {**self.shapes, **other.shapes}
        if len(shapes) != len(self.slices) + len(other.slices):
            raise ValueError("parameter names collide")
        return ParamVector(shapes, np.concatenate([self.data, other.data]))


def param_shapes(cfg: ConditionerConfig, n_outputs, prefix=""):
    c, k = cfg.channels, cfg.kernel_size
    shapes = {}
    for i in range(cfg.layers):
        taps, c_in = (k - 1, 1) if i == 0 else (k, c)
        p = f"{prefix}l{i}."
        shapes[p + "conv"] = (taps * c_in, 2 * c)
        shapes[p + "conv_b"] = (2 * c,)
        if cfg.cond_channels:
            shapes[p + "cond"] = (cfg.cond_channels, 2 * c)
        if i < cfg.layers - 1:
            shapes[p + "res"] = (c, c)
            shapes[p + "res_b"] = (c,)
        shapes[p + "skip"] = (c, c)
        shapes[p + "skip_b"] = (c,)
    shapes[prefix + "out"] = (c, c)
    shapes[prefix + "out_b"] = (c,)
    shapes[prefix + "head"] = (c, n_outputs)
    shapes[prefix + "head_b"] = (n_outputs,)
    return shapes


def init_params(params: ParamVector, cfg: ConditionerConfig, rng, prefix="", head_bias=None):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, zero output projection."""
    for name, (_, shape) in params.slices.items():
        if not name.startswith(prefix):
            continue
        leaf = name[len(prefix):]
        if leaf.endswith("_b") or leaf == "head":
            params[name] = 0.0
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    if head_bias is not None:
        params[prefix + "head_b"] = head_bias


def mixture_head_bias(n_mixtures, spread, offset=0):
    """Head bias with component shifts spread over [-spread, spread].

    Identical components receive identical gradients forever, so the shifts
    start distinct; weights stay uniform and scales at one.
    """
    bias = np.zeros(offset + 3 * n_mixtures)
    if n_mixtures > 1:
        bias[offset + n_mixtures:offset + 2 * n_mixtures] = spread * np.linspace(-1, 1, n_mixtures)
    return bias


def _taps(src, offsets):
    shifted = [ad.delay(src, off, axis=1) for off in offsets]
    return shifted[0] if len(shifted) == 1 else ad.concat(shifted, axis=-1)


def condition(inputs, cond, cfg: ConditionerConfig, weights, prefix=""):
    """Raw per-step outputs (B, T, n_out) from strictly-past ``inputs`` (B, T).

    ``weights`` maps parameter names to arrays or tape nodes.
    ``cond`` is (B, T, cond_channels), already upsampled to the input length.
    """
    xv = ad.value(inputs)
    if xv.ndim != 2:
        raise ShapeError(f"conditioner input must be (batch, time), got {xv.shape}")
    if cfg.cond_channels:
        if cond is None or np.shape(cond) != xv.shape + (cfg.cond_channels,):
            raise ShapeError(f"conditioning shape {np.shape(cond)} does not match "
                             f"{xv.shape + (cfg.cond_channels,)}")
    c, k = cfg.channels, cfg.kernel_size
    x = ad.reshape(inputs, xv.shape + (1,))
    h = None
    skip = None
    for i, d in enumerate(cfg.dilations):
        p = f"{prefix}l{i}."
        if i == 0:
            src = _taps(x, [j * d for j in range(1, k)])
        else:
            src = _taps(h, [j * d for j in range(k)])
        z = ad.add(ad.matmul(src, weights[p + "conv"]), weights[p + "conv_b"])
        if cfg.cond_channels:
            z = ad.add(z, ad.matmul(cond, weights[p + "cond"]))
        a = ad.mul(ad.tanh(z[..., :c]), ad.sigmoid(z[..., c:]))
        s = ad.add(ad.matmul(a, weights[p + "skip"]), weights[p + "skip_b"])
        skip = s if skip is None else ad.add(skip, s)
        if i < cfg.layers - 1:
            r = ad.add(ad.matmul(a, weights[p + "res"]), weights[p + "res_b"])
            h = r if h is None else ad.add(h, r)
    o = ad.tanh(ad.add(ad.matmul(skip, weights[prefix + "out"]), weights[prefix + "out_b"]))
    return ad.add(ad.matmul(o, weights[prefix + "head"]), weights[prefix + "head_b"])


def constrain(raw, kind, n_mixtures=None):
    """Split raw outputs into (log_alpha, beta[, log_pi, mu, log_s]).

    Mixture weights go through a softmax, scales through exp floored at
    SCALE_FLOOR (applied in log-space), log_alpha and beta pass through.
    """
    from .flow import TransformParams

    n_raw = np.shape(ad.value(raw))[-1]
    if kind == AFFINE:
        if n_raw != 2:
            raise ShapeError(f"affine transform expects 2 raw outputs, got {n_raw}")
        return TransformParams(raw[..., 0], raw[..., 1])
    if n_mixtures is None:
        n_mixtures = (n_raw - 2) // 3
    if n_raw != 2 + 3 * n_mixtures:
        raise ShapeError(f"non-affine transform expects {2 + 3 * n_mixtures} raw outputs, got {n_raw}")
    n = n_mixtures
    return TransformParams(
        raw[..., 0],
        raw[..., 1],
        ad.log_softmax(raw[..., 2:2 + n], axis=-1),
        raw[..., 2 + n:2 + 2 * n],
        ad.clip_min(raw[..., 2 + 2 * n:2 + 3 * n], LOG_SCALE_FLOOR),
    )


def backward(tape: ad.Tape, loss) -> ParamVector:
    """Gradient of ``loss`` with respect to the parameter vector the tape watches."""
    if tape.watched is None:
        raise ValueError("tape does not watch a parameter vector")
    params, leaves = tape.watched
    names = params.names
    grads = ad.grad(tape, loss, [leaves[n] for n in names])
    out = ParamVector(params.shapes)
    for name, g in zip(names, grads):
        out[name] = g
    return out


# --- checkpoint file ------------------------------------------------------
# layout: MAGIC | u32 version | u32 header bytes | JSON header | float64 LE data

MAGIC = b"MOLFLOW\0"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ParamVector, meta=None, extras=None):
    """Write params (and optional extra flat arrays such as optimizer moments)."""
    extras = extras or {}
    slices = [{"name": n, "offset": o, "shape": list(s)} for n, (o, s) in params.slices.items()]
    offset = len(params)
    extra_index = []
    for name, arr in extras.items():
        arr = np.asarray(arr, dtype=np.float64).ravel()
        extra_index.append({"name": name, "offset": offset, "size": int(arr.size)})
        offset += arr.size
    header = {
        "version": CHECKPOINT_VERSION,
        "n_params": len(params),
        "slices": slices,
        "extras": extra_index,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    data = np.concatenate([params.data] + [np.asarray(a, dtype=np.float64).ravel()
                                           for a in extras.values()])
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        f.write(data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Return (params, meta, extras)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:len(MAGIC)] != MAGIC or len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, n_header = struct.unpack_from("<II", raw, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start:start + n_header].decode("utf-8"))
        header["slices"], header["n_params"], header["extras"], header["meta"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    body = raw[start + n_header:]
    if len(body) % 8:
        raise CheckpointError(f"truncated checkpoint body in {path}")
    data = np.frombuffer(body, dtype="<f8").astype(np.float64)
    shapes = {s["name"]: tuple(s["shape"]) for s in sorted(header["slices"], key=lambda s: s["offset"])}
    n = header["n_params"]
    expected = n + sum(e["size"] for e in header["extras"])
    if data.size != expected:
        raise CheckpointError(f"checkpoint holds {data.size} values, header declares {expected}")
    if not np.all(np.isfinite(data)):
        raise CheckpointError(f"{path} contains non-finite values")
    params = ParamVector(shapes, data[:n].copy())
    extras = {e["name"]: data[e["offset"]:e["offset"] + e["size"]].copy() for e in header["extras"]}
    return params, header["meta"], extras


def config_dict(cfg: ConditionerConfig):
    return asdict(cfg)
