import json

import numpy as np
import pytest

from supplyshock.calibration import (
    CURVE_WEIGHT,
    IMPORT_VALUE_PERCENTILES,
    IMPORT_VALUE_QUANTILES,
    CalibrationProblem,
    SMMObjective,
    calibrate,
    default_weights,
    lognormal_dispersion,
    lognormal_lorenz,
    objective_from_moments,
    smm_objective,
)
from supplyshock.model import DomainError, ModelParams
from supplyshock.population import QUANTILE_GRID

VALUES = {"f_s": 0.9, "mu": 1.2, "p_hi": 3.5, "sigma_z": 0.55, "F_e": 0.25}


def _problem(**kw):
    kw.setdefault("n_firms", 300)
    return CalibrationProblem(**kw)


@pytest.fixture(scope="module")
def self_targets():
    obj = SMMObjective(_problem())
    m = obj.moments(VALUES)
    return m.scalars(), m.import_curve


class TestTargets:
    def test_dispersion_fit(self):
        # the fit reproduces the spread of the 5th-95th log quantiles
        from scipy.stats import norm
        sigma = lognormal_dispersion()
        spread = np.log(IMPORT_VALUE_QUANTILES[:, 6] / IMPORT_VALUE_QUANTILES[:, 0]).mean()
        z_spread = norm.ppf(IMPORT_VALUE_PERCENTILES[6]) - norm.ppf(IMPORT_VALUE_PERCENTILES[0])
        assert sigma == pytest.approx(spread / z_spread, rel=0.05)

    def test_lorenz_endpoints(self):
        curve = lognormal_lorenz(2.0)
        assert curve[0] == 0.0 and curve[-1] == 1.0
        assert np.all(np.diff(curve) >= 0)
        assert np.all(curve <= QUANTILE_GRID + 1e-15)

    def test_default_weights(self):
        w = default_weights({"mean_K": 2.0})
        assert w == {"mean_K": 0.25, "import_curve": CURVE_WEIGHT}


class TestObjective:
    def test_self_target_zero(self, self_targets):
        scalars, curve = self_targets
        problem = _problem(targets=scalars, target_curve=curve)
        assert smm_objective(VALUES, problem) == 0.0

    def test_deterministic(self):
        obj = SMMObjective(_problem())
        assert obj.evaluate(VALUES) == obj.evaluate(VALUES)
        assert SMMObjective(_problem()).evaluate(VALUES) == obj.evaluate(VALUES)

    def test_weight_linearity(self):
        base = _problem()
        doubled = _problem(weights={k: 2 * v for k, v in base.weights.items()})
        for shift in (0.8, 1.0, 1.3):
            v = {**VALUES, "p_hi": VALUES["p_hi"] * shift}
            a = SMMObjective(base).evaluate(v)
            b = SMMObjective(doubled).evaluate(v)
            assert b == pytest.approx(2 * a, rel=1e-14)

    def test_common_random_numbers_smooth(self):
        obj = SMMObjective(_problem())
        values = [obj.evaluate({**VALUES, "sigma_z": VALUES["sigma_z"] * (1 + e)})
                  for e in (-1e-4, 0.0, 1e-4)]
        # a fresh draw per evaluation would move the objective by O(1)
        assert max(values) - min(values) < 0.05 * max(values)

    def test_out_of_bounds_penalty(self):
        obj = SMMObjective(_problem())
        v = obj.evaluate({**VALUES, "f_s": 50.0})
        assert np.isfinite(v) and v >= 1e6
        assert obj.log[-1]["in_bounds"] is False

    def test_log_recomputes(self):
        problem = _problem()
        obj = SMMObjective(problem)
        value = obj.evaluate(VALUES)
        assert obj.log[-1]["objective"] == value
        assert objective_from_moments(obj.moments(VALUES), problem) == value


class TestProblem:
    def test_bad_bounds(self):
        with pytest.raises(DomainError):
            _problem(bounds={"f_s": (1.0, 0.5), "mu": (0.1, 1), "p_hi": (1, 2), "sigma_z": (0.1, 1),
                             "F_e": (0.1, 1)})

    def test_bad_weights(self):
        with pytest.raises(DomainError):
            _problem(weights={"mean_K": 0.0})
        with pytest.raises(DomainError):
            _problem(weights={"mean_K": -1.0})

    def test_round_trip(self):
        problem = _problem(start=VALUES)
        again = CalibrationProblem.from_dict(json.loads(json.dumps(problem.to_dict())))
        assert again.to_dict() == problem.to_dict()

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            CalibrationProblem.from_dict({"n_firm": 3})


class TestCalibrate:
    def test_recovers_sigma_z(self):
        fixed = ModelParams(f_s=0.9, mu=1.2, p_hi=3.5, F_e=0.05)
        probe = _problem(fixed=fixed, free=("sigma_z",), n_firms=2000)
        truth = SMMObjective(probe).moments({"sigma_z": 0.4}).exporter_share
        problem = _problem(fixed=fixed, free=("sigma_z",), n_firms=2000,
                           targets={"exporter_share": truth}, weights={"exporter_share": 1.0},
                           start={"sigma_z": 0.7}, simplex_scale=0.2, xatol=1e-4, max_evals=80)
        result = calibrate(problem)
        assert result.values["sigma_z"] == pytest.approx(0.4, rel=0.05)

    def test_flat_optimum(self):
        problem = _problem(free=("f_s", "mu"), targets={"median_K": 2.0}, weights={"median_K": 1.0},
                           start={"f_s": 0.9, "mu": 1.2}, max_evals=30)
        result = calibrate(problem)
        assert result.objective == 0.0
        assert result.moments["median_K"] == 2.0

    def test_never_worse_than_start(self):
        problem = _problem(start=VALUES, max_evals=25)
        result = calibrate(problem)
        assert result.objective <= result.start_objective
        assert result.n_evals == len(result.log)
        header = result.log_csv().splitlines()[0].split(",")
        assert header[:6] == ["eval", "f_s", "mu", "p_hi", "sigma_z", "F_e"]

    def test_replay(self):
        problem = _problem(start=VALUES, max_evals=15)
        result = calibrate(problem)
        assert SMMObjective(problem).evaluate(result.values) == result.objective

    def test_prescreen_start(self):
        problem = _problem(start=VALUES, max_evals=10, prescreen=8, prescreen_firms=100)
        result = calibrate(problem)
        assert result.objective <= result.start_objective
