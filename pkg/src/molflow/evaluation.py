"""Objective metrics over a corpus: L2 spectral distance and cross-entropy."""
from __future__ import annotations

import numpy as np

from .distill import cross_entropy_mc
from .distributions import sample_logistic
from .flow import FlowStack, stack_forward
from .signal import StftConfig, l2_spectral_distance
from .teacher import Teacher

Z95 = 1.96


def synthesize(student: FlowStack, cond, rng, length=None):
    """One parallel forward pass from fresh noise, clamped to [-1, 1]."""
    if cond is not None:
        cond = np.asarray(cond, dtype=np.float64)
        length = cond.shape[0]
        cond = cond[None]
    noise = sample_logistic(rng, size=(1, length))
    x, _ = stack_forward(noise, cond, student)
    return np.clip(x[0], -1.0, 1.0)


def confidence(values):
    """(mean, 95% half-width) using the normal approximation."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if values.size < 2:
        return mean, float("nan")
    return mean, float(Z95 * values.std(ddof=1) / np.sqrt(values.size))


def clip_rng(seed, index):
    return np.random.default_rng([int(seed), 7919, int(index)])


def evaluate_reconstructions(references, reconstructions, cfg: StftConfig = StftConfig()):
    """Per-clip L2 spectral distance between paired waveforms."""
    return [l2_spectral_distance(r, x, cfg) for r, x in zip(references, reconstructions)]


def evaluate(student: FlowStack, teacher: Teacher, clips, seed=0, mc_samples=4,
             stft: StftConfig = StftConfig()):
    """Per-clip and aggregate metrics. Cross-entropy is in nats per sample."""
    rows = []
    for i, clip in enumerate(clips):
        rng = clip_rng(seed, i)
        cond = clip.cond
        ref = clip.waveform.samples
        recon = synthesize(student, cond, rng)
        ce = cross_entropy_mc(student, teacher, cond, rng, mc_samples)
        rows.append({
            "clip_id": clip.clip_id,
            "l2_spectral_distance": l2_spectral_distance(ref, recon, stft),
            "cross_entropy": float(ce) / ref.size,
            "cross_entropy_se": ce.se / ref.size,
        })
    l2_mean, l2_ci = confidence([r["l2_spectral_distance"] for r in rows])
    ce_mean, ce_ci = confidence([r["cross_entropy"] for r in rows])
    return {
        "clips": rows,
        "aggregate": {
            "n_clips": len(rows),
            "l2_spectral_distance": l2_mean,
            "l2_spectral_distance_ci95": l2_ci,
            "cross_entropy": ce_mean,
            "cross_entropy_ci95": ce_ci,
        },
    }


def format_report(report, label="student"):
    """Plain-text table: per-clip rows then the mean +- 95% interval."""
    lines = [f"{'clip':<12} {'L2 spectral distance':>22} {'cross entropy':>16}"]
    for row in report["clips"]:
        lines.append(f"{row['clip_id']:<12} {row['l2_spectral_distance']:>22.4f} "
                     f"{row['cross_entropy']:>16.4f}")
    agg = report["aggregate"]
    lines.append("-" * len(lines[0]))
    l2 = f"{agg['l2_spectral_distance']:.4f}±{agg['l2_spectral_distance_ci95']:.4f}"
    ce = f"{agg['cross_entropy']:.4f}±{agg['cross_entropy_ci95']:.4f}"
    lines.append(f"{label:<12} {l2:>22} {ce:>16}")
    lines.append(f"(mean ± 95% confidence interval over {agg['n_clips']} clips)")
    return "\n".join(lines)
