"""Elementwise invertible transforms and the autoregressive flow stack."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .conditioner import (AFFINE, NON_AFFINE, ConditionerConfig, ParamVector, condition,
                          constrain, init_params, mixture_head_bias, param_shapes)
from .distributions import (Logistic, MoLParams, mol_all_terms, mol_logit_quantile,
                            standard_logistic_log_pdf)
from .errors import ShapeError


@dataclass(frozen=True)
class TransformParams:
    """Per-step transform parameters; mixture fields are None for the affine kind.

    Fields may be floats, arrays or tape nodes. Mixture weights are stored as
    log-weights and scales as log-scales.
    """

    log_alpha: object
    beta: object
    log_pi: object = None
    mu: object = None
    log_s: object = None

    @property
    def kind(self):
        return AFFINE if self.log_pi is None else NON_AFFINE

    @property
    def mol(self):
        if self.log_pi is None:
            return None
        return MoLParams.from_log(ad.value(self.log_pi), ad.value(self.mu), ad.value(self.log_s))

    @classmethod
    def from_mol(cls, log_alpha, beta, mol: MoLParams):
        log_pi, mu, log_s = mol.log_terms()
        return cls(log_alpha, beta, log_pi, mu, log_s)

    def values(self):
        return TransformParams(*(None if f is None else ad.value(f) for f in
                                 (self.log_alpha, self.beta, self.log_pi, self.mu, self.log_s)))


def affine_forward(u, tp: TransformParams):
    x = ad.add(ad.mul(ad.exp(tp.log_alpha), u), tp.beta)
    return x, tp.log_alpha


def nonaffine_forward(u, tp: TransformParams):
    """x = alpha * logit(MoLCDF(u)) + beta and its log-derivative."""
    ln_c, ln_1mc, ln_pdf = mol_all_terms(u, tp.log_pi, tp.mu, tp.log_s)
    x = ad.add(ad.mul(ad.exp(tp.log_alpha), ad.sub(ln_c, ln_1mc)), tp.beta)
    log_det = ad.sub(ad.sub(ad.add(tp.log_alpha, ln_pdf), ln_c), ln_1mc)
    return x, log_det


def transform_forward(u, tp: TransformParams):
    if tp.kind == AFFINE:
        return affine_forward(u, tp)
    return nonaffine_forward(u, tp)


def nonaffine_inverse(x, tp: TransformParams, tol=1e-12):
    """Recover u from x. Sequential and for testing only; synthesis never inverts."""
    tp = tp.values()
    y = (np.asarray(x, dtype=np.float64) - tp.beta) * np.exp(-np.asarray(tp.log_alpha))
    return mol_logit_quantile(y, tp.mol, tol=tol)


def affine_inverse(x, tp: TransformParams):
    tp = tp.values()
    return (np.asarray(x) - tp.beta) * np.exp(-np.asarray(tp.log_alpha))


@dataclass(frozen=True)
class FlowLayer:
    kind: str
    config: ConditionerConfig
    prefix: str


class FlowStack:
    """Ordered autoregressive flow layers sharing one parameter vector.

    The base distribution is the standard logistic.
    """

    base = Logistic(0.0, 1.0)

    def __init__(self, layers, params: ParamVector):
        if not layers:
            raise ValueError("a flow stack needs at least one layer")
        self.layers = list(layers)
        self.params = params

    @classmethod
    def build(cls, configs, seed=0, mu_spread=0.5):
        """One layer per ConditionerConfig; each starts close to the identity."""
        rng = np.random.default_rng(seed)
        layers, shapes = [], {}
        for i, cfg in enumerate(configs):
            layer = FlowLayer(cfg.kind, cfg, f"f{i}.")
            layers.append(layer)
            shapes.update(param_shapes(cfg, cfg.n_outputs, layer.prefix))
        params = ParamVector(shapes)
        for layer in layers:
            cfg = layer.config
            bias = None
            if cfg.kind == NON_AFFINE:
                bias = mixture_head_bias(cfg.n_mixtures, mu_spread, offset=2)
            init_params(params, cfg, rng, layer.prefix, head_bias=bias)
        return cls(layers, params)

    @property
    def kind(self):
        kinds = {layer.kind for layer in self.layers}
        return kinds.pop() if len(kinds) == 1 else "mixed"

    @property
    def cond_channels(self):
        return self.layers[0].config.cond_channels

    def with_params(self, params):
        return FlowStack(self.layers, params)

    def describe(self):
        return [{"prefix": l.prefix, **{k: v for k, v in vars(l.config).items()}}
                for l in self.layers]


def batch_cond(cond, noise_shape, channels):
    if not channels:
        return None
    if cond is None:
        return np.zeros(noise_shape + (channels,))
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim == 2:
        cond = np.broadcast_to(cond, (noise_shape[0],) + cond.shape)
    if cond.shape != noise_shape + (channels,):
        raise ShapeError(f"conditioning shape {cond.shape} does not match noise {noise_shape}")
    return cond


def stack_forward(noise, cond, stack: FlowStack, weights=None, return_params=False):
    """Push noise (B, D) through every layer.

    Returns x (B, D) and the accumulated per-step log-Jacobian diagonal (B, D).
    ``weights`` defaults to the stack's own parameters; pass tape leaves to
    record gradients. With ``return_params`` the per-layer TransformParams
    (the cached parametrisation) are returned as well.
    """
    nv = np.asarray(ad.value(noise), dtype=np.float64)
    squeeze = nv.ndim == 1
    if squeeze:
        noise = nv[None, :]
        nv = noise
    if nv.ndim != 2:
        raise ShapeError(f"noise must be (batch, time), got {nv.shape}")
    cond = batch_cond(cond, nv.shape, stack.cond_channels)
    weights = stack.params.as_dict() if weights is None else weights
    h, log_det, cached = noise, None, []
    for layer in stack.layers:
        raw = condition(h, cond, layer.config, weights, layer.prefix)
        tp = constrain(raw, layer.kind, layer.config.n_mixtures)
        h, ld = transform_forward(h, tp)
        log_det = ld if log_det is None else ad.add(log_det, ld)
        cached.append(tp)
    if squeeze:
        h, log_det = h[0], log_det[0]
    if return_params:
        return h, log_det, cached
    return h, log_det


def student_log_density(x, noise, log_det):
    """Per-step ln p_S(x_t | x_<t) = ln p_u(u_t) - log_det_t.

    ``x`` is carried for interface symmetry; the density is determined by the
    noise and Jacobian alone.
    """
    if np.shape(ad.value(x)) != np.shape(ad.value(noise)) or \
            np.shape(ad.value(noise)) != np.shape(ad.value(log_det)):
        raise ShapeError("x, noise and log_det must share a shape")
    return ad.sub(standard_logistic_log_pdf(noise), log_det)


def identity_stack(kinds=(AFFINE,), cond_channels=0, n_mixtures=1, channels=4, layers=1):
    """A stack whose every layer is exactly the identity map (zero head, unit mixture)."""
    configs = [ConditionerConfig(layers=layers, channels=channels, kind=k,
                                 n_mixtures=n_mixtures, cond_channels=cond_channels)
               for k in kinds]
    stack = FlowStack.build(configs, mu_spread=0.0)
    for layer in stack.layers:
        stack.params[layer.prefix + "head_b"] = 0.0
    return stack


__all__ = [
    "TransformParams", "FlowLayer", "FlowStack", "affine_forward", "nonaffine_forward",
    "nonaffine_inverse", "affine_inverse", "transform_forward", "stack_forward",
    "student_log_density", "identity_stack",
]
