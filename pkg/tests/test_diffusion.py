import numpy as np
import pytest
from scipy import stats

from ridgediff.diffusion import (
    BranchSpec,
    LatentImage,
    NoiseSchedule,
    branch_identities,
    branch_impressions,
    ddpm_step,
    linear_schedule,
    q_sample,
    run_chain,
    sample,
    training_pair,
)
from ridgediff.errors import DimensionMismatch, InvalidSchedule
from ridgediff.imagecore import GrayImage


def product_oracle(beta):
    out, acc = [], 1.0
    for b in beta:
        acc *= 1.0 - float(b)
        out.append(acc)
    return np.array(out)


class ZeroModel:
    def __call__(self, x, t):
        return np.zeros_like(x)


class OracleModel:
    """Returns the exact noise that explains ``x_t`` given the known ``x0``."""

    def __init__(self, x0, s):
        self.x0, self.s = x0, s

    def __call__(self, x, t):
        ab = self.s.alpha_bar[t - 1].reshape(-1, 1, 1)
        return (x - np.sqrt(ab) * self.x0) / np.sqrt(1 - ab)


def test_default_schedule_product():
    s = linear_schedule()
    assert s.T == 1000
    oracle = product_oracle(s.beta)
    assert np.all(np.abs(s.alpha_bar - oracle) <= 1e-12 * oracle)
    assert s.alpha_bar[-1] == pytest.approx(4.04e-5, rel=0.01)
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all(np.diff(s.beta) >= 0)
    assert np.allclose(s.sigma, np.sqrt(s.beta))


def test_constant_and_two_step_schedules():
    s = linear_schedule(50, 0.01, 0.01)
    assert np.allclose(s.alpha_bar, 0.99 ** np.arange(1, 51), rtol=1e-12)
    two = linear_schedule(2, 1e-3, 0.5)
    assert list(two.beta) == [1e-3, 0.5]


@pytest.mark.parametrize("args", [(1, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0), (2.5, 1e-4, 0.02)])
def test_invalid_schedules(args):
    with pytest.raises(InvalidSchedule):
        linear_schedule(*args)


def test_schedule_is_read_only():
    s = linear_schedule(10)
    with pytest.raises(ValueError):
        s.alpha_bar[0] = 0.5


def test_q_sample_noise_free_and_terminal():
    s = linear_schedule()
    x0 = np.random.default_rng(0).uniform(-1, 1, (8, 8))
    assert np.array_equal(q_sample(x0, 300, np.zeros_like(x0), s), np.sqrt(s.alpha_bar[299]) * x0)
    eps = np.random.default_rng(1).standard_normal((8, 8))
    out = q_sample(x0, 1000, eps, s)
    assert np.abs(out - eps).max() < 0.01 * np.abs(eps).max()
    with pytest.raises(DimensionMismatch):
        q_sample(x0, 10, np.zeros((4, 4)), s)
    with pytest.raises(ValueError):
        q_sample(x0, 0, eps, s)


def test_q_sample_latent_in_latent_out():
    s = linear_schedule()
    out = q_sample(LatentImage(np.zeros((4, 4))), 5, np.ones((4, 4)), s)
    assert isinstance(out, LatentImage)


@pytest.mark.parametrize("t", [1, 500, 1000])
def test_forward_marginal_monte_carlo(t):
    s = linear_schedule()
    x0 = np.linspace(-1, 1, 16).reshape(4, 4)
    n = 10_000
    rng = np.random.default_rng(t)
    draws = q_sample(np.broadcast_to(x0, (n, 4, 4)), np.full(n, t), rng.standard_normal((n, 4, 4)), s)
    ab = s.alpha_bar[t - 1]
    var = 1 - ab
    se_mean = np.sqrt(var / n)
    se_var = var * np.sqrt(2 / (n - 1))
    assert np.all(np.abs(draws.mean(0) - np.sqrt(ab) * x0) <= 3 * se_mean + 1e-12)
    # a 3-SE band per element is exceeded by chance ~0.3% of the time; allow none over 16 elements
    assert np.all(np.abs(draws.var(0, ddof=1) - var) <= 3 * se_var + 1e-15)


@pytest.mark.parametrize("k", [10, 100])
def test_chain_equivalence(k):
    s = linear_schedule()
    x0 = np.linspace(-1, 1, 64).reshape(8, 8)
    n = 10_000
    rng = np.random.default_rng(0)
    x = np.broadcast_to(x0, (n, 8, 8)).copy()
    for t in range(1, k + 1):
        x = np.sqrt(s.alpha[t - 1]) * x + np.sqrt(s.beta[t - 1]) * rng.standard_normal(x.shape)
    ab = s.alpha_bar[k - 1]
    se_mean = np.sqrt((1 - ab) / n)
    se_var = (1 - ab) * np.sqrt(2 / (n - 1))
    mean_ok = np.abs(x.mean(0) - np.sqrt(ab) * x0) <= 3 * se_mean
    var_ok = np.abs(x.var(0, ddof=1) - (1 - ab)) <= 3 * se_var
    # 64 elements at a 3-SE band: a couple of chance exceedances are expected
    assert mean_ok.mean() >= 0.95 and var_ok.mean() >= 0.95
    # pooled over all elements the agreement must be tight
    assert abs((x.mean(0) - np.sqrt(ab) * x0).mean()) <= 3 * se_mean / 8
    assert abs(x.var(0, ddof=1).mean() - (1 - ab)) <= 3 * se_var / 8


def test_training_pair_consistency_and_determinism():
    s = linear_schedule()
    x0 = np.zeros((8, 8))
    a = training_pair(x0, s, np.random.default_rng(4))
    b = training_pair(x0, s, np.random.default_rng(4))
    assert a[1] == b[1] and np.array_equal(a[0], b[0])
    xt, t, eps = a
    assert np.array_equal(xt, q_sample(x0, t, eps, s))
    batch = training_pair(np.zeros((5, 8, 8)), s, np.random.default_rng(4))
    assert batch[1].shape == (5,)


def test_training_step_uniformity():
    s = linear_schedule()
    rng = np.random.default_rng(11)
    ts = np.array([training_pair(np.zeros((1, 1, 1)), s, rng)[1][0] for _ in range(2_000)])
    bulk = rng.integers(1, s.T + 1, size=98_000)  # same generator law, cheaper than 10^5 calls
    counts = np.bincount(np.concatenate([ts, bulk]), minlength=s.T + 1)[1:]
    assert counts.sum() == 100_000
    assert stats.chisquare(counts).pvalue > 0.01


def test_ddpm_step_final_step_is_deterministic():
    s = linear_schedule()
    x = np.ones((1, 4, 4))
    a = ddpm_step(ZeroModel(), x, 1, s, np.random.default_rng(0))
    b = ddpm_step(ZeroModel(), x, 1, s, np.random.default_rng(1))
    assert np.array_equal(a, b)
    assert np.allclose(a, x / np.sqrt(s.alpha[0]))


def test_ddpm_step_posterior_formula():
    s = linear_schedule()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 4, 4))
    eps = rng.standard_normal((2, 4, 4))

    class Fixed:
        def __call__(self, xx, t):
            return eps

    t = 250
    got = ddpm_step(Fixed(), x, t, s, np.random.default_rng(9))
    z = np.random.default_rng(9).standard_normal(x.shape)
    b, a, ab = s.beta[t - 1], s.alpha[t - 1], s.alpha_bar[t - 1]
    want = (x - b / np.sqrt(1 - ab) * eps) / np.sqrt(a) + np.sqrt(b) * z
    assert np.allclose(got, want, atol=1e-12)


def test_oracle_inversion_recovers_x0():
    s = linear_schedule()
    x0 = np.random.default_rng(5).uniform(-1, 1, (1, 8, 8))
    x = np.random.default_rng(6).standard_normal((1, 8, 8))
    out = run_chain(OracleModel(x0, s), x, s.T, 0, s, None, noise_scale=0.0)
    assert np.abs(out - x0).max() < 1e-3


def test_small_beta_continuity():
    s = NoiseSchedule(np.full(10, 1e-8))
    x = np.random.default_rng(2).standard_normal((1, 4, 4))
    step = ddpm_step(ZeroModel(), x, 5, s, np.random.default_rng(0))
    assert np.abs(step - x).max() < 1e-3


def test_dimension_mismatch_from_model():
    class Bad:
        def __call__(self, x, t):
            return np.zeros((1, 2, 2))

    with pytest.raises(DimensionMismatch):
        ddpm_step(Bad(), np.zeros((1, 4, 4)), 3, linear_schedule(), np.random.default_rng(0))


def test_sample_range_and_determinism():
    s = linear_schedule(20)
    a = sample(ZeroModel(), s, 8, np.random.default_rng(3), n=3)
    b = sample(ZeroModel(), s, 8, np.random.default_rng(3), n=3)
    assert len(a) == 3 and all(x == y for x, y in zip(a, b))
    assert all(0 <= im.pixels.min() and im.pixels.max() <= 1 for im in a)
    single = sample(ZeroModel(), s, 8, np.random.default_rng(3))
    assert isinstance(single, GrayImage)


def test_latent_round_trip_in_byte_domain():
    img = GrayImage(np.arange(256, dtype=np.float64).reshape(16, 16) / 255)
    back = LatentImage.from_gray(img).to_gray()
    assert np.array_equal(np.round(back.pixels * 255), np.arange(256).reshape(16, 16))
    with pytest.raises(DimensionMismatch):
        LatentImage(np.zeros((3, 4)))


def test_branch_spec_validation():
    assert BranchSpec().validate(1000) == BranchSpec(400, 4)
    for bad in (BranchSpec(0, 4), BranchSpec(1000, 4), BranchSpec(10, 1)):
        with pytest.raises(ValueError):
            bad.validate(1000)


def test_branch_without_continuation_noise_is_identical():
    s = linear_schedule(30)
    ims = branch_impressions(ZeroModel(), s, BranchSpec(10, 2), 8, np.random.default_rng(0), noise_scale=0.0)
    assert ims[0] == ims[1]


def test_branch_shares_anchor_and_diverges():
    s = linear_schedule(30)
    anchors = []
    ims = branch_impressions(ZeroModel(), s, BranchSpec(10, 3), 8, np.random.default_rng(0), anchor_out=anchors)
    again = []
    branch_impressions(ZeroModel(), s, BranchSpec(10, 3), 8, np.random.default_rng(0), anchor_out=again)
    assert np.array_equal(anchors[0], again[0])
    assert ims[0] != ims[1]


def test_branch_identities_shape():
    s = linear_schedule(20)
    groups = branch_identities(ZeroModel(), s, BranchSpec(5, 2), 8, np.random.default_rng(0), 5, batch_size=4)
    assert len(groups) == 5 and all(len(g) == 2 for g in groups)
