import mpmath as mp
import numpy as np
import pytest
from scipy import integrate, stats

from molflow.conditioner import ConditionerConfig, condition
from molflow.distributions import MoLParams, mol_pdf, sample_mol, standard_logistic_log_pdf
from molflow.errors import DivergenceError, ShapeError, UserError
from molflow.optim import TrainConfig
from molflow.teacher import (PREFIX, Teacher, heldout_nll, random_crops, teacher_fit_mle,
                             teacher_log_density, teacher_sample)

from conftest import count_modes

CFG = ConditionerConfig(layers=2, channels=4, n_mixtures=3, cond_channels=0)
CFG_COND = ConditionerConfig(layers=3, channels=4, n_mixtures=2, cond_channels=2)


def random_teacher(cfg=CFG, seed=0):
    teacher = Teacher.build(cfg, seed=seed)
    rng = np.random.default_rng(seed + 50)
    teacher.params[PREFIX + "head"] = 0.5 * rng.standard_normal(teacher.params[PREFIX + "head"].shape)
    return teacher


def bimodal_dataset(n=10, length=256, seed=0):
    rng = np.random.default_rng(seed)
    return [(np.where(rng.random(length) < 0.5, -0.5, 0.5) + 0.05 * rng.standard_normal(length),
             np.zeros((length, 0))) for _ in range(n)]


class TestLogDensity:
    def test_zeroed_is_standard_logistic(self):
        x = np.random.default_rng(0).uniform(-1, 1, size=(2, 20))
        lp = teacher_log_density(Teacher.zeroed(CFG), x)
        np.testing.assert_allclose(lp, standard_logistic_log_pdf(x), rtol=1e-14)

    def test_one_dimensional(self):
        teacher = random_teacher()
        x = np.random.default_rng(1).uniform(-1, 1, size=15)
        np.testing.assert_array_equal(teacher_log_density(teacher, x), teacher_log_density(teacher, x[None])[0])

    def test_causality(self):
        teacher = random_teacher(CFG_COND)
        rng = np.random.default_rng(2)
        x, c = rng.uniform(-1, 1, size=(1, 30)), rng.normal(size=(1, 30, 2))
        base = teacher_log_density(teacher, x, c)
        x2 = x.copy()
        x2[0, 12] = -x2[0, 12]
        out = teacher_log_density(teacher, x2, c)
        assert out[0, :12].tobytes() == base[0, :12].tobytes()

    def test_factored_oracle(self):
        teacher = random_teacher(seed=3)
        x = np.array([0.3, -0.6, 0.1])
        total = teacher_log_density(teacher, x).sum()
        w = teacher.params.as_dict()
        n = CFG.n_mixtures
        brute = mp.mpf(0)
        for t in range(3):
            raw = condition(x[None, :t + 1], None, CFG, w, PREFIX)[0, -1]
            logits, mu, log_s = raw[:n], raw[n:2 * n], raw[2 * n:]
            pi = [mp.e ** mp.mpf(v) for v in logits]
            z = sum(pi)
            dens = mp.mpf(0)
            for k in range(n):
                s = mp.e ** mp.mpf(max(log_s[k], np.log(1e-4)))
                e = mp.e ** (-(mp.mpf(x[t]) - mp.mpf(mu[k])) / s)
                dens += pi[k] / z * e / (s * (1 + e) ** 2)
            brute += mp.log(dens)
        assert total == pytest.approx(float(brute), rel=1e-12)

    def test_per_step_normalisation(self):
        teacher = random_teacher(seed=4)
        mol = teacher.mol_params(np.array([0.2, -0.4, 0.9, 0.0]))
        for t in range(4):
            p = MoLParams(mol.weights[0, t], mol.mus[0, t], mol.scales[0, t])
            a = p.mus.min() - 40 * p.scales.max()
            b = p.mus.max() + 40 * p.scales.max()
            total, _ = integrate.quad(lambda u: mol_pdf(u, p), a, b, points=sorted(p.mus), limit=200)
            assert total == pytest.approx(1.0, abs=1e-5)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            teacher_log_density(random_teacher(), np.zeros((1, 2, 3)))

    def test_fixed_mixture(self):
        mol = MoLParams([0.2, 0.3, 0.5], [-0.5, 0.0, 0.5], [0.1, 0.2, 0.1])
        teacher = Teacher.fixed_mixture(CFG, mol)
        x = np.random.default_rng(5).uniform(-1, 1, size=(2, 9))
        lp = teacher_log_density(teacher, x)
        np.testing.assert_allclose(lp, np.log(mol_pdf(x, mol)), rtol=1e-12)
        with pytest.raises(ShapeError):
            Teacher.fixed_mixture(CFG, MoLParams([1.0], [0.0], [1.0]))


class TestSample:
    def test_zeroed_matches_clamped_logistic(self):
        x = teacher_sample(Teacher.zeroed(CFG), np.random.default_rng(0), length=100, batch=1000).ravel()
        assert x.size == 10**5 and np.abs(x).max() <= 1.0
        inner = np.sort(x[np.abs(x) < 1])
        ecdf = np.searchsorted(np.sort(x), inner, side="right") / x.size
        assert np.max(np.abs(ecdf - stats.logistic.cdf(inner))) < 0.02
        assert np.mean(x == 1.0) == pytest.approx(1 - stats.logistic.cdf(1.0), abs=0.01)

    def test_deterministic(self):
        teacher = random_teacher(CFG_COND)
        cond = np.random.default_rng(1).normal(size=(2, 40, 2))
        a = teacher_sample(teacher, np.random.default_rng(7), cond=cond)
        b = teacher_sample(teacher, np.random.default_rng(7), cond=cond)
        assert a.tobytes() == b.tobytes() and a.shape == (2, 40)

    def test_samples_have_finite_density(self):
        teacher = random_teacher(seed=6)
        x = teacher_sample(teacher, np.random.default_rng(8), length=50, batch=2)
        assert np.all(np.isfinite(teacher_log_density(teacher, x)))

    def test_window_matches_full_context(self):
        teacher = random_teacher(seed=9)
        x = teacher_sample(teacher, np.random.default_rng(4), length=24, batch=3)
        # replay the same random stream with full-prefix predictions
        rng = np.random.default_rng(4)
        ref = np.zeros((3, 24))
        for t in range(24):
            mol = teacher.mol_params(ref[:, :t + 1])
            last = MoLParams(mol.weights[:, -1], mol.mus[:, -1], mol.scales[:, -1])
            ref[:, t] = np.clip(sample_mol(rng, last), -1, 1)
        np.testing.assert_allclose(x, ref, rtol=0, atol=1e-12)

    def test_needs_length(self):
        with pytest.raises(ShapeError):
            teacher_sample(random_teacher(), np.random.default_rng(0))


class TestMle:
    def test_constant_zero_data(self):
        data = [(np.zeros(128), np.zeros((128, 0))) for _ in range(5)]
        _, summary = teacher_fit_mle(Teacher.build(CFG), data,
                                     TrainConfig(lr=1e-2, batch=2, clip_len=64, iterations=60), clock=None)
        assert summary["final_nll"] < summary["initial_nll"]

    def test_bimodal_source(self):
        data = bimodal_dataset()
        fitted, summary = teacher_fit_mle(Teacher.build(CFG), data,
                                          TrainConfig(lr=3e-2, batch=4, clip_len=64, iterations=300),
                                          clock=None)
        assert summary["final_nll"] < summary["initial_nll"] - 1.0
        mol = fitted.mol_params(data[0][0][:64])
        w = mol.weights[0, -1]
        assert np.sum(w > 0.1) >= 2
        p = MoLParams(w, mol.mus[0, -1], mol.scales[0, -1])
        assert count_modes(mol_pdf(np.linspace(-1, 1, 4001), p)) >= 2

    def test_seeded_rerun_is_identical(self):
        data = bimodal_dataset(n=4)
        cfg = TrainConfig(lr=1e-2, batch=2, clip_len=32, iterations=20, seed=3)
        logs = []
        for _ in range(2):
            recs = []
            _, summary = teacher_fit_mle(Teacher.build(CFG, seed=1), data, cfg, on_record=recs.append, clock=None)
            logs.append((recs, summary))
        assert logs[0] == logs[1]
        assert all(r.get("wallclock") is None for r in logs[0][0])

    def test_loss_trend(self):
        recs = []
        teacher_fit_mle(Teacher.build(CFG), bimodal_dataset(), TrainConfig(lr=1e-2, batch=4, clip_len=64,
                        iterations=200), on_record=recs.append, clock=None)
        nll = np.array([r["nll"] for r in recs if "nll" in r])
        smooth = np.convolve(nll, np.ones(25) / 25, mode="valid")
        assert smooth[-1] < smooth[0]

    def test_empty_dataset(self):
        with pytest.raises(UserError):
            teacher_fit_mle(Teacher.build(CFG), [], TrainConfig(iterations=1))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        data = [(np.full(64, np.nan), np.zeros((64, 0))) for _ in range(3)]
        with pytest.raises(DivergenceError, match="non-finite"):
            teacher_fit_mle(Teacher.build(CFG), data, TrainConfig(iterations=2, clip_len=32))

    def test_random_crops(self):
        data = bimodal_dataset(n=3, length=40)
        x, c = random_crops(np.random.default_rng(0), data, 5, 16)
        assert x.shape == (5, 16) and c.shape == (5, 16, 0)

    def test_heldout_nll_of_zeroed(self):
        x = np.zeros(10)
        assert heldout_nll(Teacher.zeroed(CFG), [(x, np.zeros((10, 0)))], 10) == pytest.approx(np.log(4))
