import numpy as np
import pytest

from molflow.distributions import MoLParams


def random_mol(rng, n=None, spread=3.0, min_scale=0.2, max_scale=1.5):
    n = n or int(rng.integers(1, 6))
    w = rng.dirichlet(np.ones(n))
    return MoLParams(w, rng.uniform(-spread, spread, n), rng.uniform(min_scale, max_scale, n))


BIMODAL = MoLParams([0.5, 0.5], [-2.0, 2.0], [0.3, 0.3])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_tp(rng, **kw):
    from molflow.flow import TransformParams
    return TransformParams.from_mol(rng.uniform(-1, 1), rng.uniform(-1, 1), random_mol(rng, **kw))


def count_modes(density):
    """Strict local maxima of a sampled density."""
    d = np.diff(density)
    d = d[d != 0]
    return int(np.sum((d[:-1] > 0) & (d[1:] < 0)))


TRIMODAL_GAPS = MoLParams(np.ones(3) / 3, [-3.0, 0.0, 3.0], [0.2, 0.2, 0.2])


def bimodal_teacher(separation=0.3, scale=0.1, cond_channels=2):
    """Context-free teacher whose every step is 0.5 L(-sep, s) + 0.5 L(sep, s)."""
    from molflow.conditioner import ConditionerConfig
    from molflow.teacher import Teacher
    cfg = ConditionerConfig(layers=2, channels=4, n_mixtures=2, cond_channels=cond_channels)
    return Teacher.fixed_mixture(cfg, MoLParams([0.5, 0.5], [-separation, separation], [scale, scale]))
