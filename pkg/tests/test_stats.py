import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from impulsekit import impulse as imp
from impulsekit import stats as st
from impulsekit.controller import cycle_matrix, sample_states
from impulsekit.errors import DomainError
from impulsekit.policy import NonMarkovProbe, ss_policy
from impulsekit.process import drifted_bm
from impulsekit.rng import Streams


@settings(max_examples=200)
@given(p=hst.floats(0, 1), alpha=hst.floats(0.001, 0.5))
def test_verdict_follows_p_value(p, alpha):
    r = st.TestReport("t", 0.0, p, alpha, (10,))
    assert (r.verdict == st.REJECT) == (p < alpha)
    assert r.to_dict()["verdict"] == r.verdict


def test_report_rejects_bad_p():
    with pytest.raises(DomainError):
        st.TestReport("t", 0.0, 1.5, 0.05, (1,))


def test_format_reports():
    text = st.format_reports([st.TestReport("alpha-test", 1.0, 0.5, 0.05, (3, 4))])
    assert "alpha-test" in text and "fail-to-reject" in text and "3x4" in text


# -- KS -----------------------------------------------------------------------------

def test_ks_same_sample():
    a = np.random.default_rng(0).normal(size=100)
    r = st.ks_two_sample(a, a)
    assert r.statistic == 0.0 and r.p_value == 1.0


def test_ks_shifted_uniform_rejects():
    rng = np.random.default_rng(1)
    r = st.ks_two_sample(rng.uniform(0, 1, 1000), rng.uniform(0.5, 1.5, 1000), alpha=0.01)
    assert r.rejected


def test_ks_too_small():
    with pytest.raises(DomainError):
        st.ks_two_sample(np.arange(19.0), np.arange(30.0))


def test_ks_calibration():
    cal = st.calibrate(lambda rng: st.ks_two_sample(rng.normal(size=200), rng.normal(size=200)),
                       500, 0.05, seed=11)
    assert 0.03 <= cal.rate <= 0.07


# -- cycles i.i.d. ----------------------------------------------------------------

def test_sawtooth_cycles_identical():
    spec = drifted_bm(-1.0, 0.0)
    lengths, _ = cycle_matrix(spec, imp.deterministic(), ss_policy(0, 1), 1.0, 1e-3,
                              Streams(0), 30, 5)
    reports = st.test_cycles_iid(lengths)
    ks = [r for r in reports if r.test_name.startswith("ks")]
    assert ks and all(r.statistic == 0.0 and r.p_value == 1.0 for r in ks)
    assert all(not r.rejected for r in reports)


def test_cycles_iid_needs_cycles():
    with pytest.raises(DomainError):
        st.test_cycles_iid(np.ones((30, 2)))
    with pytest.raises(DomainError):
        st.test_cycles_iid(np.ones((30, 4)), pairs=[(0, 1)])
    with pytest.raises(DomainError):
        st.test_cycles_iid(np.ones((10, 4)))


def test_lag1_detects_dependence():
    x = st.synthetic_lag_dependent(np.random.default_rng(0), 300, 10, rho=0.3)
    assert st.lag1_permutation_test(x, 0.01, 499).rejected


def test_lag1_calibration():
    cal = st.calibrate(lambda rng: st.lag1_permutation_test(
        st.synthetic_iid_cycles(rng, 100, 5), 0.05, 199, rng), 500, 0.05, seed=3)
    assert cal.ok, cal.to_dict()


def _power(run, n_rep, seed):
    return st.calibrate(run, n_rep, 0.05, seed=seed).rate


def test_monotone_power_lag1():
    def at(n):
        return lambda rng: st.lag1_permutation_test(
            st.synthetic_lag_dependent(rng, n, 5, rho=0.1), 0.05, 199, rng)
    assert _power(at(80), 200, 1) <= _power(at(160), 200, 2)


def _second_order(rng, n):
    # future copies the past with probability 0.15: not Markov given the present
    past = rng.integers(3, size=n)
    present = rng.integers(3, size=n)
    copy = rng.random(n) < 0.15
    future = np.where(copy, past, rng.integers(3, size=n))
    return np.column_stack((past, present, future)).astype(float)


def test_monotone_power_markov():
    def at(n):
        return lambda rng: st.test_markov(_second_order(rng, n), 0, 1, 2, (3, 3, 3), 0.05)
    low, high = _power(at(600), 200, 1), _power(at(1200), 200, 2)
    assert low <= high and high > 0.5


@pytest.mark.slow
def test_previous_cycle_probe_power():
    # the reorder level shifts by the previous cycle length: consecutive cycles correlate
    spec = drifted_bm(-1.0, 0.5)
    probe = NonMarkovProbe(ss_policy(0.0, 1.0), "previous-cycle", 0.3)
    hits = 0
    for seed in range(20):
        lengths, _ = cycle_matrix(spec, imp.deterministic(), probe, 1.0, 1e-3, Streams(seed),
                                  1000, 10)
        lag1 = [r for r in st.test_cycles_iid(lengths, permutations=199, seed=seed)
                if r.test_name.startswith("lag1")][0]
        hits += lag1.rejected
    assert hits / 20 >= 0.95


# -- Markov -----------------------------------------------------------------------

def test_markov_synthetic_null_not_rejected():
    rng = np.random.default_rng(4)
    P = st.random_transition_matrix(rng, 4)
    r = st.test_markov(st.synthetic_markov_triples(rng, 20_000, P), 0, 1, 2, (4, 4, 4))
    assert not r.rejected
    assert "bonferroni_p" in r.extra and r.extra["resolution"]["bins"] == [4, 4, 4]


def test_markov_calibration():
    P = st.random_transition_matrix(np.random.default_rng(0), 3)
    cal = st.calibrate(lambda rng: st.test_markov(
        st.synthetic_markov_triples(rng, 3000, P), 0, 1, 2, (3, 3, 3), 0.05), 500, 0.05, seed=5)
    assert cal.ok, cal.to_dict()


def test_markov_degenerate_dynamics():
    spec = drifted_bm(-1.0, 0.0)
    vals, _ = sample_states(spec, imp.deterministic(), ss_policy(0, 1), 1.0, [0.1, 1.0, 1.3],
                            0.01, Streams(0), 200)
    r = st.test_markov(vals, 0.1, 1.0, 1.3)
    assert r.p_value == 1.0 and any("degenerate" in n for n in r.notes)


def test_markov_sparse_cells():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(60, 3))
    with pytest.raises(DomainError):
        st.test_markov(data, 0, 1, 2)
    r = st.test_markov(rng.normal(size=(1200, 3)), 0, 1, 2, min_cell=50)
    assert any("merged" in n for n in r.notes)


def test_markov_time_order():
    with pytest.raises(DomainError):
        st.test_markov(np.zeros((10, 3)), 1.0, 0.5, 2.0)
    with pytest.raises(DomainError):
        st.test_markov(np.zeros((10, 3)), 0.1, 0.5, 2.0, horizon=1.0)


def test_quantile_bins():
    x = np.arange(100.0)
    codes = st.quantile_bins(x, 4)
    assert np.bincount(codes).tolist() == [25, 25, 25, 25]
    assert st.quantile_bins(np.array([1.0, 1.0, 2.0]), 4).tolist() == [0, 0, 1]


def test_binomial_bounds():
    lo, hi = st.binomial_bounds(500, 0.05)
    assert lo < 0.05 < hi and 0.02 < lo and hi < 0.08
