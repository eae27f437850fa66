import math

import numpy as np
import pytest

from tnet.dgp import ConfigError, DgpSpec, generate
from tnet.estimation import EffectEstimate, EstimandSpec
from tnet.evaluation import (CorruptionSpec, compute_metrics, convergence_sweep, corrupt, dr_stress,
                             log_log_slope, within_out_split, write_series)
from tnet.training import TrainConfig, train

from conftest import TINY

ITE = EstimandSpec("ITE", (1, 0.5), (0, 0.0))


def test_exact_estimates_give_zero_metrics():
    tau_i = np.array([1.0, 2.0, 3.0])
    r = compute_metrics([EffectEstimate(ITE, 2.0, tau_i.copy())], [(2.0, tau_i)])
    label = ITE.label
    assert r.mae_average[label] == 0 and r.pehe_individual[label] == 0
    assert r.mape_average[label] == 0 and r.mape_individual[label] == 0


def test_constant_error_metrics():
    tau_i = np.ones(4)
    r = compute_metrics([EffectEstimate(ITE, 0.9, tau_i - 0.1)], [(1.0, tau_i)])
    assert r.mae_average[ITE.label] == pytest.approx(0.1)
    assert r.pehe_individual[ITE.label] == pytest.approx(0.1)
    assert r.mape_average[ITE.label] == pytest.approx(0.1)


def test_hand_pehe_and_mape():
    truth = np.array([1.0, 2.0])
    est = truth + np.array([0.3, -0.4])
    r = compute_metrics([EffectEstimate(ITE, est.mean(), est)], [(truth.mean(), truth)], "out_of_sample")
    assert r.pehe_individual[ITE.label] == pytest.approx(math.sqrt(0.125), abs=1e-12)
    assert r.mape_individual[ITE.label] == pytest.approx(0.25, abs=1e-12)
    assert r.split == "out_of_sample"


def test_mape_absent_for_zero_truth():
    r = compute_metrics([EffectEstimate(ITE, 0.1, np.array([0.1, 0.0]))], [(0.0, np.array([0.0, 0.0]))])
    assert r.mape_average[ITE.label] is None and r.mape_individual[ITE.label] is None


def test_metric_errors():
    with pytest.raises(ValueError):
        compute_metrics([EffectEstimate(ITE, 0.0, np.zeros(2))], [(0.0, np.zeros(3))])
    with pytest.raises(ValueError):
        compute_metrics([EffectEstimate(ITE, 0.0)], [])


def test_splits():
    tr, out = within_out_split(1000, (0.8, 0.2), seed=1)
    assert (len(tr), len(out)) == (800, 200)
    assert not set(tr) & set(out)
    tr2, out2 = within_out_split(1000, (0.8, 0.2), seed=1)
    assert np.array_equal(tr, tr2) and np.array_equal(out, out2)
    assert len(within_out_split(50, (1.0, 0.0))[1]) == 0
    with pytest.raises(ConfigError):
        within_out_split(10, (0.0, 0.5))
    with pytest.raises(ConfigError):
        within_out_split(10, (0.8, 0.5))


def test_corruption_spec():
    assert not CorruptionSpec("none").outcome and not CorruptionSpec("none").propensity
    both = CorruptionSpec("both")
    assert both.outcome and both.propensity
    with pytest.raises(ConfigError):
        CorruptionSpec("everything")
    with pytest.raises(ConfigError):
        CorruptionSpec("outcome", "melt")


@pytest.mark.parametrize("mode", ["freeze_random_init", "constant", "label_shuffle"])
def test_corrupted_heads_stay_fixed(tiny_data, mode):
    cfg = TrainConfig(model=TINY, iterations=5)
    init, run_cfg = corrupt(tiny_data, cfg, CorruptionSpec("outcome", mode))
    assert run_cfg.freeze_outcome and not run_cfg.freeze_propensity
    before = {k: v.copy() for k, v in init.parameters().items() if k.startswith("mu")}
    out = train(tiny_data, run_cfg, model=init).model
    for k, v in before.items():
        assert np.array_equal(out.parameters()[k], v)
    if mode == "constant":
        from tnet.models import nuisances
        np.testing.assert_array_equal(nuisances(out, tiny_data).mu, 0.0)


def test_dr_stress_shape(tiny_generated):
    rows = dr_stress(tiny_generated.spec, 20, TrainConfig(model=TINY, iterations=3), generated=tiny_generated)
    assert len(rows) == 8
    assert {(r["arm"], r["method"]) for r in rows} == {(a, m) for a in ("none", "propensity", "outcome", "both")
                                                       for m in ("tnet", "plugin")}
    assert all(r["AME_error"] >= 0 for r in rows)


def test_sweep_single_n_has_no_slope():
    res = convergence_sweep(DgpSpec("homo", covariate_dim=3), [40], TrainConfig(model=TINY, iterations=3),
                            repeats=3, graph_param=2)
    assert len(res.rows) == 1 and res.slope is None and res.decreasing


def test_sweep_validation():
    with pytest.raises(ConfigError):
        convergence_sweep(DgpSpec(), [100, 50])
    with pytest.raises(ConfigError):
        convergence_sweep(DgpSpec(), [100], repeats=2)


def test_slope():
    assert log_log_slope([10, 100, 1000], [1.0, 0.1, 0.01]) == pytest.approx(-1.0)


def test_write_series(tmp_path):
    p = write_series(tmp_path / "s.csv", [1, 2], [0.5, 0.25], [0.1, 0.2])
    assert p.read_text().splitlines() == ["x,y,sd", "1.0,0.5,0.1", "2.0,0.25,0.2"]
