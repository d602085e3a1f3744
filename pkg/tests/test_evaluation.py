import numpy as np
import pytest

from molflow.conditioner import ConditionerConfig
from molflow.evaluation import (confidence, evaluate, evaluate_reconstructions, format_report,
                                synthesize)
from molflow.flow import FlowStack, identity_stack
from molflow.signal import CorpusConfig, make_synthetic_corpus
from molflow.distributions import sample_logistic

from conftest import bimodal_teacher


def tiny_student():
    return FlowStack.build([ConditionerConfig(layers=2, channels=4, n_mixtures=2)], seed=0)


def test_oracle_reconstruction_scores_zero():
    clips = make_synthetic_corpus(CorpusConfig(n_clips=3), 0)
    refs = [c.waveform.samples for c in clips]
    assert evaluate_reconstructions(refs, [r.copy() for r in refs]) == [0.0, 0.0, 0.0]


def test_confidence_interval():
    mean, half = confidence([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert half == pytest.approx(1.96 * np.std([1, 2, 3, 4], ddof=1) / 2)
    assert np.isnan(confidence([1.0])[1])


def test_interval_halves_when_sample_quadruples():
    values = np.random.default_rng(0).gamma(2.0, size=4000)
    assert confidence(values[:1000])[1] / confidence(values)[1] == pytest.approx(2.0, rel=0.3)


def test_report_interval_halves_with_four_times_the_clips():
    clips = make_synthetic_corpus(CorpusConfig(n_clips=200), 4)
    student, teacher = tiny_student(), bimodal_teacher()
    small = evaluate(student, teacher, clips[:50], seed=1, mc_samples=1)["aggregate"]
    large = evaluate(student, teacher, clips, seed=1, mc_samples=1)["aggregate"]
    for key in ("l2_spectral_distance_ci95", "cross_entropy_ci95"):
        assert small[key] / large[key] == pytest.approx(2.0, rel=0.3)


def test_synthesize_identity_is_clamped_noise():
    x = synthesize(identity_stack(cond_channels=2), np.zeros((300, 2)), np.random.default_rng(5))
    ref = np.clip(sample_logistic(np.random.default_rng(5), size=(1, 300))[0], -1, 1)
    np.testing.assert_array_equal(x, ref)


def test_evaluate_is_deterministic_and_formats():
    clips = make_synthetic_corpus(CorpusConfig(n_clips=3), 2)
    a = evaluate(tiny_student(), bimodal_teacher(), clips, seed=3)
    b = evaluate(tiny_student(), bimodal_teacher(), clips, seed=3)
    assert a == b
    assert a["aggregate"]["n_clips"] == 3 and len(a["clips"]) == 3
    text = format_report(a, "non-affine")
    assert "clip_0002" in text and "95% confidence interval" in text
    assert text.splitlines()[-2].startswith("non-affine")
