import math

import numpy as np
import pytest

from underreport.effects import SensitivityBand, adjusted_odds_ratio, risk_difference, sensitivity_sweep
from underreport.estimator import FitConfig, Mode, fit
from underreport.links import Link
from underreport.model import Dataset, OutcomeParams
from underreport.synthlab import SynthConfig, generate


def expit(t):
    return 1 / (1 + math.exp(-t))


def test_null_effect_is_zero():
    data = generate(SynthConfig(n=50, d=2, seed=1)).data
    assert risk_difference(OutcomeParams(0.3, [1.0, -1.0], 0.0), data) == 0.0


def test_intercept_only_closed_form():
    data = Dataset(x=np.zeros((7, 0)), y=np.zeros(7), a_obs=np.zeros(7))
    assert risk_difference(OutcomeParams(0.0, [], 1.0), data) == pytest.approx(0.2310585786300049, abs=1e-15)


def test_matches_row_loop():
    x = np.array([[0.5, -1.0], [2.0, 0.3], [-1.2, 0.8]])
    data = Dataset(x=x, y=[0, 1, 1], a_obs=[1, 0, 0])
    theta = OutcomeParams(-0.4, [0.7, -1.1], 0.9)
    expected = 0.0
    for row in x:
        eta = -0.4 + 0.7 * row[0] - 1.1 * row[1]
        expected += expit(eta + 0.9) - expit(eta)
    assert risk_difference(theta, data) == pytest.approx(expected / 3, abs=1e-15)


def test_permutation_and_duplication_invariance():
    data = generate(SynthConfig(n=200, d=3, seed=2)).data
    theta = OutcomeParams(0.2, [0.3, -0.5, 1.0], 0.7, Link.PROBIT)
    rd = risk_difference(theta, data)
    perm = np.random.default_rng(0).permutation(data.n)
    assert risk_difference(theta, data.take(perm)) == pytest.approx(rd, abs=1e-15)
    doubled = data.take(np.tile(np.arange(data.n), 2))
    assert risk_difference(theta, doubled) == pytest.approx(rd, abs=1e-12)


@pytest.mark.parametrize("theta_a", [0.01, 0.5, 3.0])
def test_positive_effect_positive_rd(theta_a):
    data = generate(SynthConfig(n=100, d=2, seed=3)).data
    assert risk_difference(OutcomeParams(0.0, [2.0, -3.0], theta_a), data) > 0


def test_odds_ratio():
    assert adjusted_odds_ratio(OutcomeParams(0.0, [], 0.0)) == 1.0
    assert adjusted_odds_ratio(OutcomeParams(0.0, [], 1.0)) == pytest.approx(2.718281828459045, abs=1e-15)
    assert adjusted_odds_ratio(OutcomeParams(0.0, [], math.log(1.51))) == pytest.approx(1.51, abs=1e-14)
    with pytest.raises(NotImplementedError):
        adjusted_odds_ratio(OutcomeParams(0.0, [], 1.0, Link.PROBIT))


def test_band_validation():
    with pytest.raises(ValueError):
        SensitivityBand(np.array([0.2, 0.1]), np.zeros(2), np.ones(2, bool))
    with pytest.raises(ValueError):
        SensitivityBand(np.array([0.1, 0.2]), np.zeros(3), np.ones(2, bool))


def test_sweep_at_zero_is_unadjusted_fit():
    data = generate(SynthConfig(n=800, d=2, seed=5)).data
    config = FitConfig(seed=4)
    band = sensitivity_sweep(data, config, [0.0])
    direct = fit(data, FitConfig(mode=Mode.KNOWN_TAU, tau=0.0, seed=4))
    assert band.rd_estimates[0] == risk_difference(direct.params.outcome, data)
    assert band.converged[0]


def test_sweep_singleton_equals_direct_fit():
    data = generate(SynthConfig(n=800, d=2, seed=6)).data
    band = sensitivity_sweep(data, FitConfig(seed=9), [0.25])
    direct = fit(data, FitConfig(mode=Mode.KNOWN_TAU, tau=0.25, seed=9))
    assert band.rd_estimates[0] == risk_difference(direct.params.outcome, data)


def test_sweep_with_bootstrap_intervals():
    data = generate(SynthConfig(n=500, d=2, seed=7)).data
    band = sensitivity_sweep(data, FitConfig(restarts=1), [0.0, 0.3], dict(replicates=12))
    assert np.all(band.ci_lower <= band.ci_upper)
    assert band.ci_lower.shape == (2,)


def test_sweep_rejects_bad_grid():
    data = generate(SynthConfig(n=50, d=1, seed=7)).data
    with pytest.raises(ValueError):
        sensitivity_sweep(data, FitConfig(), [0.1, 1.0])
    with pytest.raises(ValueError):
        sensitivity_sweep(data, FitConfig(), [])


def test_sweep_flags_failed_points():
    data = generate(SynthConfig(n=300, d=3, seed=7)).data
    band = sensitivity_sweep(data, FitConfig(max_iterations=1, restarts=1), [0.1, 0.2])
    assert not band.converged.any()


def test_sweep_closer_to_truth_at_true_tau():
    closer = []
    for r in range(20):
        sample = generate(SynthConfig(n=5000, d=5, tau=0.25, seed=900 + r))
        band = sensitivity_sweep(sample.data, FitConfig(restarts=1), [0.0, 0.25])
        err = np.abs(band.rd_estimates - sample.true_rd)
        closer.append(err[1] - err[0])
    assert np.median(closer) < 0
