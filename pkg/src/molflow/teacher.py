"""Autoregressive mixture-of-logistics teacher.

The teacher reuses the conditioner network with a ``3 * n_mixtures`` head
(mixture logits, shifts, raw log-scales) and predicts p_T(x_t | x_<t, m).
"""
from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from .conditioner import (LOG_SCALE_FLOOR, ConditionerConfig, ParamVector, backward, condition,
                          init_params, mixture_head_bias, param_shapes)
from .distributions import MoLParams, mol_log_pdf_terms, sample_mol
from .errors import DivergenceError, ShapeError, UserError
from .flow import batch_cond
from .optim import Adam, AdamState, TrainConfig

PREFIX = "t."


class Teacher:
    def __init__(self, config: ConditionerConfig, params: ParamVector):
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config: ConditionerConfig, seed=0, mu_spread=0.5):
        params = ParamVector(param_shapes(config, 3 * config.n_mixtures, PREFIX))
        init_params(params, config, np.random.default_rng(seed), PREFIX,
                    head_bias=mixture_head_bias(config.n_mixtures, mu_spread))
        return cls(config, params)

    @classmethod
    def zeroed(cls, config: ConditionerConfig):
        """All weights and biases zero: every step is the standard logistic."""
        return cls(config, ParamVector(param_shapes(config, 3 * config.n_mixtures, PREFIX)))

    @classmethod
    def fixed_mixture(cls, config: ConditionerConfig, mol: MoLParams):
        """Zero network weights with the head bias set to ``mol``: the same
        mixture at every step regardless of context."""
        if mol.n != config.n_mixtures:
            raise ShapeError(f"mixture has {mol.n} components, config expects {config.n_mixtures}")
        teacher = cls.zeroed(config)
        log_pi, mu, log_s = mol.log_terms()
        teacher.params[PREFIX + "head_b"] = np.concatenate([log_pi, mu, log_s])
        return teacher

    @property
    def n_mixtures(self):
        return self.config.n_mixtures

    def with_params(self, params):
        return Teacher(self.config, params)

    def mixture_terms(self, x, cond=None, weights=None):
        """(log_pi, mu, log_s), each (B, T, N), predicted from x_<t."""
        weights = self.params.as_dict() if weights is None else weights
        cond = batch_cond(cond, np.shape(ad.value(x)), self.config.cond_channels)
        raw = condition(x, cond, self.config, weights, PREFIX)
        n = self.n_mixtures
        return (ad.log_softmax(raw[..., :n], axis=-1), raw[..., n:2 * n],
                ad.clip_min(raw[..., 2 * n:], LOG_SCALE_FLOOR))

    def mol_params(self, x, cond=None):
        x = _as_batch(x)
        return MoLParams.from_log(*self.mixture_terms(x, cond))


def _as_batch(x):
    v = ad.value(x)
    if np.ndim(v) == 1:
        return x[None, :] if isinstance(x, ad.Node) else np.asarray(v)[None, :]
    return x


def teacher_log_density(teacher: Teacher, x, cond=None, weights=None):
    """Per-step ln p_T(x_t | x_<t); differentiable in ``x`` and ``weights``."""
    squeeze = np.ndim(ad.value(x)) == 1
    x = _as_batch(x)
    if np.ndim(ad.value(x)) != 2:
        raise ShapeError("teacher input must be (time,) or (batch, time)")
    if cond is not None and np.ndim(cond) == 2 and squeeze:
        cond = np.asarray(cond)[None]
    out = mol_log_pdf_terms(x, *teacher.mixture_terms(x, cond, weights))
    return out[0] if squeeze else out


def teacher_sample(teacher: Teacher, rng, cond=None, length=None, batch=1):
    """Ancestral sampling, clamped to [-1, 1].

    Each step re-runs the network on the receptive-field window only, which
    gives exactly the same prediction as a full-length pass.
    """
    cfg = teacher.config
    if cond is not None:
        cond = np.asarray(cond, dtype=np.float64)
        if cond.ndim == 2:
            cond = cond[None]
        batch, length = cond.shape[0], cond.shape[1]
    elif length is None:
        raise ShapeError("teacher_sample needs conditioning or an explicit length")
    if cfg.cond_channels and cond is None:
        cond = np.zeros((batch, length, cfg.cond_channels))
    window = cfg.receptive_field + 1
    weights = teacher.params.as_dict()
    x = np.zeros((batch, length))
    for t in range(length):
        lo = max(0, t - window + 1)
        ctx = x[:, lo:t + 1]
        c = cond[:, lo:t + 1] if cfg.cond_channels else None
        raw = condition(ctx, c, cfg, weights, PREFIX)[:, -1]
        n = cfg.n_mixtures
        log_pi = raw[:, :n] - np.logaddexp.reduce(raw[:, :n], axis=-1, keepdims=True)
        mol = MoLParams.from_log(log_pi, raw[:, n:2 * n], np.maximum(raw[:, 2 * n:], LOG_SCALE_FLOOR))
        x[:, t] = np.clip(sample_mol(rng, mol), -1.0, 1.0)
    return x


# --- maximum likelihood fitting -------------------------------------------

def random_crops(rng, dataset, batch, clip_len):
    xs, cs = [], []
    for i in rng.integers(0, len(dataset), size=batch):
        wav, cond = dataset[i]
        n = min(clip_len, wav.shape[0])
        start = int(rng.integers(0, wav.shape[0] - n + 1))
        xs.append(wav[start:start + n])
        cs.append(cond[start:start + n])
    n = min(len(x) for x in xs)
    return np.stack([x[:n] for x in xs]), np.stack([c[:n] for c in cs])


def heldout_nll(teacher: Teacher, dataset, clip_len):
    """Mean per-sample NLL over the first ``clip_len`` samples of each clip."""
    total, count = 0.0, 0
    for wav, cond in dataset:
        n = min(clip_len, wav.shape[0])
        lp = teacher_log_density(teacher, wav[None, :n], cond[None, :n])
        total -= float(lp.sum())
        count += n
    return total / count


def split_dataset(dataset, heldout_fraction=0.2):
    if len(dataset) < 2:
        return list(dataset), list(dataset)
    n_held = max(1, int(round(heldout_fraction * len(dataset))))
    return list(dataset[:-n_held]), list(dataset[-n_held:])


def teacher_fit_mle(teacher: Teacher, dataset, cfg: TrainConfig, on_record=None,
                    heldout_fraction=0.2, eval_every=None, clock=time.perf_counter):
    """Maximum-likelihood fit on (waveform, cond) pairs with teacher forcing.

    ``dataset`` is a sequence of (samples (T,), cond (T, C)) arrays. Returns
    the fitted teacher and a summary dict with initial/final held-out NLL.
    Pass ``clock=None`` to keep wall-clock times out of the records.
    """
    if not dataset:
        raise UserError("teacher training needs a non-empty dataset")
    train, held = split_dataset(dataset, heldout_fraction)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr, clip_norm=cfg.grad_clip)
    state = AdamState.zeros(len(teacher.params))
    params = teacher.params.copy()
    initial = heldout_nll(teacher, held, cfg.clip_len)
    eval_every = eval_every or max(1, cfg.iterations // 10)
    emit = on_record or (lambda rec: None)
    emit({"step": 0, "heldout_nll": initial})
    start = clock() if clock else None
    for step in range(1, cfg.iterations + 1):
        x, c = random_crops(rng, train, cfg.batch, cfg.clip_len)
        tape = ad.Tape()
        w = tape.watch(params)
        lp = teacher_log_density(teacher, x, c, weights=w)
        loss = ad.neg(ad.mean(lp))
        nll = float(ad.value(loss))
        grad = backward(tape, loss)
        if not np.isfinite(nll) or not np.all(np.isfinite(grad.data)):
            raise DivergenceError(
                f"teacher NLL became non-finite at step {step}: nll={nll}, "
                f"max|param|={np.abs(params.data).max():.3g}, "
                f"non-finite grads in {[n for n in grad.names if not np.all(np.isfinite(grad[n]))]}")
        new, state, gnorm = opt.update(params.data, grad.data, state)
        params = params.like(new)
        rec = {"step": step, "nll": nll, "grad_norm": gnorm,
               "wallclock": clock() - start if clock else None}
        if step % eval_every == 0 or step == cfg.iterations:
            rec["heldout_nll"] = heldout_nll(teacher.with_params(params), held, cfg.clip_len)
        emit(rec)
    fitted = teacher.with_params(params)
    final = heldout_nll(fitted, held, cfg.clip_len)
    if not np.isfinite(final):
        raise DivergenceError(f"held-out NLL is non-finite after training: {final}")
    return fitted, {"initial_nll": initial, "final_nll": final, "steps": cfg.iterations}
