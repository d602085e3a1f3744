"""Probability density distillation for affine and non-affine students.

KLD(S || T) = H(S, T) - H(S). The cross-entropy is a Monte-Carlo average of
the teacher's negative log-density on reparametrised student samples. The
entropy is either analytic (all-affine stacks: sum of log-scales + 2 per step)
or estimated from the flow's log-Jacobian, which works for any transform.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .conditioner import AFFINE, backward
from .distributions import sample_logistic, standard_logistic_log_pdf
from .errors import NumericalError, ShapeError
from .flow import FlowStack, stack_forward
from .optim import Adam, AdamState, TrainConfig
from .signal import StftConfig, stft_magnitude_ad
from .teacher import Teacher, random_crops, teacher_log_density, teacher_sample

POWER_STFT = StftConfig(fft_bins=256, hop=64)


@dataclass(frozen=True)
class McEstimate:
    """Monte-Carlo mean with its standard error; ``value`` may be a tape node."""

    value: object
    se: float
    per_draw: np.ndarray

    @property
    def n(self):
        return self.per_draw.size

    def __float__(self):
        return float(ad.value(self.value))


@dataclass(frozen=True)
class KldEstimate:
    cross_entropy: float
    entropy: float
    kld: float
    n_mc_samples: int
    cross_entropy_se: float = float("nan")
    entropy_se: float = float("nan")
    kld_se: float = float("nan")

    def __post_init__(self):
        if self.n_mc_samples < 1:
            raise ValueError("n_mc_samples must be at least 1")
        if self.kld != self.cross_entropy - self.entropy:
            raise ValueError("kld must equal cross_entropy - entropy")

    @classmethod
    def from_draws(cls, ce, h):
        ce, h = np.asarray(ce, dtype=np.float64), np.asarray(h, dtype=np.float64)
        c, e = float(ce.mean()), float(h.mean())
        return cls(c, e, c - e, ce.size, _se(ce), _se(h), _se(ce - h))


def _se(values):
    values = np.asarray(values)
    if values.size < 2:
        return float("nan")
    return float(values.std(ddof=1) / np.sqrt(values.size))


def _estimate(per_draw):
    return McEstimate(ad.mean(per_draw), _se(ad.value(per_draw)), np.array(ad.value(per_draw)))


def _draw_cond(cond, n, length=None):
    """Conditioning for ``n`` draws: (T, C) is shared, (B, T, C) is repeated n/B times."""
    if cond is None:
        if length is None:
            raise ShapeError("need conditioning frames or an explicit length")
        return None, length
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim == 2:
        return np.broadcast_to(cond, (n,) + cond.shape), cond.shape[0]
    if n % cond.shape[0]:
        raise ShapeError(f"{n} draws cannot be split over a batch of {cond.shape[0]}")
    return np.repeat(cond, n // cond.shape[0], axis=0), cond.shape[1]


@dataclass
class DrawTerms:
    x: object
    log_det: object
    cross_entropy: object
    entropy: object
    params: list


def draw_terms(student: FlowStack, teacher: Teacher | None, noise, cond, weights=None):
    """Per-draw cross-entropy and entropy from one pass over cached transform params."""
    x, log_det, cached = stack_forward(noise, cond, student, weights, return_params=True)
    h = ad.sum(ad.sub(log_det, standard_logistic_log_pdf(noise)), axis=-1)
    ce = None
    if teacher is not None:
        t_cond = cond if teacher.config.cond_channels else None
        ce = ad.neg(ad.sum(teacher_log_density(teacher, x, t_cond), axis=-1))
    return DrawTerms(x, log_det, ce, h, cached)


def cross_entropy_mc(student, teacher, cond, rng, mc_samples=1, length=None, weights=None):
    """H(P_S, P_T) in nats per sequence, averaged over ``mc_samples`` noise draws."""
    cond, length = _draw_cond(cond, mc_samples, length)
    noise = sample_logistic(rng, size=(mc_samples, length))
    return _estimate(draw_terms(student, teacher, noise, cond, weights).cross_entropy)


def entropy_mc(student, cond, rng, mc_samples=1, length=None, weights=None):
    """H(P_S) = E[sum_t -ln p_u(u_t) + log_det_t]; valid for any transform kind."""
    cond, length = _draw_cond(cond, mc_samples, length)
    noise = sample_logistic(rng, size=(mc_samples, length))
    return _estimate(draw_terms(student, None, noise, cond, weights).entropy)


def entropy_affine_analytic(log_alphas):
    """sum_t ln(alpha_t) + 2 D: entropy of per-step logistics with scales alpha_t."""
    length = np.shape(ad.value(log_alphas))[-1]
    return ad.add(ad.sum(log_alphas, axis=-1), 2.0 * length)


def kld_estimate(student, teacher, cond, rng, mc_samples, length=None):
    cond, length = _draw_cond(cond, mc_samples, length)
    noise = sample_logistic(rng, size=(mc_samples, length))
    terms = draw_terms(student, teacher, noise, cond)
    return KldEstimate.from_draws(terms.cross_entropy, terms.entropy)


def average_spectrum(x, cfg: StftConfig):
    # same DFT path as the student side so identical inputs give exactly zero
    return ad.mean(stft_magnitude_ad(np.asarray(x, dtype=np.float64), cfg), axis=-2)


def power_loss(x_student, x_target, cfg: StftConfig = POWER_STFT):
    """Mean squared difference of time-averaged |STFT| spectra."""
    target = np.asarray(x_target, dtype=np.float64)
    if np.shape(ad.value(x_student)) != target.shape:
        raise ShapeError(f"student batch {np.shape(ad.value(x_student))} and target "
                         f"{target.shape} differ in shape")
    s = ad.mean(stft_magnitude_ad(x_student, cfg), axis=-2)
    return ad.mean(ad.square(ad.sub(s, average_spectrum(target, cfg))))


def distillation_loss(student, teacher, noise, cond, targets, cfg: TrainConfig,
                      weights=None, stft=POWER_STFT):
    """Total loss node plus a breakdown dict (floats)."""
    terms = draw_terms(student, teacher, noise, cond, weights)
    if student.kind == AFFINE:
        h = entropy_affine_analytic(terms.log_det)
    else:
        h = terms.entropy
    ce_mean = ad.mean(terms.cross_entropy)
    h_mean = ad.mean(h)
    kld = ad.sub(ce_mean, h_mean)
    loss, power = kld, 0.0
    if cfg.power_loss_weight > 0 and targets is not None:
        reps = np.shape(noise)[0] // np.shape(targets)[0]
        p = power_loss(terms.x, np.repeat(targets, reps, axis=0), stft)
        loss = ad.add(kld, ad.mul(p, cfg.power_loss_weight))
        power = float(ad.value(p))
    breakdown = {"kld": float(ad.value(kld)), "ce": float(ad.value(ce_mean)),
                 "h": float(ad.value(h_mean)), "power": power, "loss": float(ad.value(loss))}
    return loss, breakdown


def distill_step(student: FlowStack, teacher: Teacher, batch, cfg: TrainConfig, rng,
                 opt_state: AdamState, stft=POWER_STFT):
    """One Adam step on KLD + weighted power loss.

    ``batch`` is (cond (B, T, C) or None, targets (B, T) or None); each batch
    element gets ``cfg.mc_samples`` noise draws. Returns (record, new params,
    new optimizer state).
    """
    cond, targets = batch
    if cond is not None:
        n_batch, length = np.shape(cond)[:2]
    elif targets is not None:
        n_batch, length = np.shape(targets)
    else:
        n_batch, length = cfg.batch, cfg.clip_len
    n = n_batch * cfg.mc_samples
    cond_n, _ = _draw_cond(cond, n, length)
    noise = sample_logistic(rng, size=(n, length))
    tape = ad.Tape()
    weights = tape.watch(student.params)
    loss, rec = distillation_loss(student, teacher, noise, cond_n, targets, cfg, weights, stft)
    grad = backward(tape, loss)
    bad = [name for name in grad.names if not np.all(np.isfinite(grad[name]))]
    if not np.isfinite(rec["loss"]) or bad:
        raise NumericalError(
            f"non-finite distillation loss: {rec}; max|param|={np.abs(student.params.data).max():.3g}; "
            f"non-finite gradient slices: {bad}")
    opt = Adam(cfg.lr, clip_norm=cfg.grad_clip)
    new, opt_state, gnorm = opt.update(student.params.data, grad.data, opt_state)
    rec["grad_norm"] = gnorm
    return rec, student.params.like(new), opt_state


def step_rng(seed, step):
    """Per-step generator so a resumed run replays the same random stream."""
    return np.random.default_rng([int(seed), int(step)])


def distill(student: FlowStack, teacher: Teacher, batches, cfg: TrainConfig, start_step=0,
            opt_state=None, on_record=None, stft=POWER_STFT, clock=time.perf_counter):
    """Run ``cfg.iterations`` steps from ``start_step``.

    ``batches(rng, step)`` returns the (cond, targets) pair for a step.
    Returns (student, optimizer state, records).
    """
    opt_state = opt_state or AdamState.zeros(len(student.params))
    emit = on_record or (lambda rec: None)
    start = clock() if clock else None
    records = []
    for step in range(start_step + 1, start_step + cfg.iterations + 1):
        rng = step_rng(cfg.seed, step)
        batch = batches(rng, step)
        rec, params, opt_state = distill_step(student, teacher, batch, cfg, rng, opt_state, stft)
        student = student.with_params(params)
        rec = {"step": step, **rec, "wallclock": clock() - start if clock else None}
        records.append(rec)
        emit(rec)
    return student, opt_state, records


def corpus_batches(dataset, cfg: TrainConfig):
    """Random crops of (waveform, cond) pairs: cond frames and power-loss targets."""
    def fn(rng, step):
        x, c = random_crops(rng, dataset, cfg.batch, cfg.clip_len)
        return c, x
    return fn


def teacher_batches(teacher: Teacher, cfg: TrainConfig, pool_size=8, seed=0, cond_channels=0):
    """Batches for a context-free teacher: fixed conditioning, teacher samples as targets."""
    rng = np.random.default_rng(seed)
    pool = teacher_sample(teacher, rng, length=cfg.clip_len, batch=pool_size)
    cond = np.zeros((cfg.batch, cfg.clip_len, cond_channels)) if cond_channels else None

    def fn(rng, step):
        idx = rng.integers(0, pool_size, size=cfg.batch)
        return cond, pool[idx]
    return fn


def moving_average(values, window):
    values = np.asarray(values, dtype=np.float64)
    if values.size < window:
        raise ValueError("series shorter than the smoothing window")
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")
