"""
Experiment plans, sweeps, angle studies and the verification suites
"""

import json
import math

import numpy as np
import pytest

from sdpcut.app.errors import InvalidConfigError, NonConvergenceError
from sdpcut.services.experiments import (
    VERIFY_SUITES,
    Algorithm,
    ExperimentPlan,
    RunMode,
    SweepRow,
    load_plan,
    reference_angle_deg,
    run_angles,
    run_sweep,
    run_trial,
    run_verify,
)
from sdpcut.services.mixture_model import derive_seed, make_gaussian_spec
from sdpcut.services.preprocessing import CenteredData, center
from sdpcut.services.sdp_solver import SolverOptions
from sdpcut.services.trial_runner import TrialRunner

ALL_ALGORITHMS = ["sdp", "spectral_pw", "spectral_sign"]


def _silent_plan(**overrides):
    fields = dict(
        n_grid=[8, 12],
        p_grid=[20],
        model="gaussian",
        alpha=0.5,
        sigma1=0.0,
        sigma2=0.0,
        trials=2,
        algorithms=ALL_ALGORITHMS,
        threads=2,
    )
    fields.update(overrides)
    return ExperimentPlan(**fields)


def _small_plan(**overrides):
    fields = dict(
        n_grid=[10],
        p_grid=[40],
        model="gaussian",
        alpha=0.5,
        trials=3,
        master_seed=5,
        algorithms=ALL_ALGORITHMS,
        threads=3,
    )
    fields.update(overrides)
    return ExperimentPlan(**fields)


def test_plan_defaults():
    plan = ExperimentPlan()
    assert plan.mode == RunMode.SWEEP
    assert plan.model == "bernoulli"
    assert plan.eps == pytest.approx(0.1 * plan.alpha)
    assert plan.algorithms == [Algorithm.SDP, Algorithm.SPECTRAL_PW, Algorithm.SPECTRAL_SIGN]


def test_plan_deduplicates_grids():
    plan = ExperimentPlan(n_grid=[100, 100, 200], p_grid=[500], algorithms=["sdp", "sdp"])
    assert plan.n_grid == [100, 200]
    assert plan.algorithms == [Algorithm.SDP]
    assert plan.cells() == [(100, 500), (200, 500)]


@pytest.mark.parametrize("fields", [
    {"n_grid": []},
    {"n_grid": [1]},
    {"p_grid": [0]},
    {"algorithms": []},
    {"algorithms": ["kmeans"]},
    {"model": "poisson"},
    {"w1": 1.0},
    {"alpha": 0.9, "eps": 0.5},
    {"n_grid": [2], "w1": 0.1},
])
def test_plan_rejects_invalid_fields(fields):
    with pytest.raises(ValueError):
        ExperimentPlan(**fields)


def test_load_plan_from_file(tmp_path):
    path = tmp_path / "plan.json"
    path.write_text(json.dumps({
        "mode": "angles",
        "n": 50,
        "p": 400,
        "seed": 9,
        "algorithms": "sdp,spectral_sign",
        "sdp.restarts": 1,
        "sdp.tol": 1e-8,
    }))
    plan = load_plan(path, overrides={"trials": 4, "p_grid": None})

    assert plan.mode == RunMode.ANGLES
    assert plan.n_grid == [50]
    assert plan.p_grid == [400]
    assert plan.master_seed == 9
    assert plan.trials == 4
    assert plan.algorithms == [Algorithm.SDP, Algorithm.SPECTRAL_SIGN]
    assert plan.sdp.restarts == 1
    assert plan.sdp.tol == 1e-8


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "plan.json"
    path.write_text(json.dumps({"n": 50, "trials": 2}))
    plan = load_plan(path, overrides={"trials": 7, "sdp.max_iters": 10})
    assert plan.trials == 7
    assert plan.sdp.max_iters == 10


@pytest.mark.parametrize("content", ["{not json", "[1, 2, 3]", json.dumps({"trials": 0})])
def test_load_plan_invalid_file(tmp_path, content):
    path = tmp_path / "plan.json"
    path.write_text(content)
    with pytest.raises(InvalidConfigError):
        load_plan(path)


def test_load_plan_missing_file(tmp_path):
    with pytest.raises(InvalidConfigError):
        load_plan(tmp_path / "missing.json")


def test_run_trial_shares_one_dataset():
    spec = make_gaussian_spec(0.5, 0.0, 20, 8, 0.5, sigma1=0.0, sigma2=0.0)
    outcomes = run_trial(spec, seed=1, algorithms=list(Algorithm), opts=SolverOptions(), with_phi=True)

    assert set(outcomes) == set(Algorithm)
    for outcome in outcomes.values():
        assert outcome.error is None
        assert outcome.metrics.success_rate == 1.0
        assert outcome.elapsed_ms >= 0.0
    assert outcomes[Algorithm.SDP].metrics.phi < 0.1


def test_zero_noise_sweep_recovers_everything():
    plan = _silent_plan()
    rows = run_sweep(plan)

    assert len(rows) == 2 * 3
    assert [(row.algorithm, row.n) for row in rows[:3]] == [("sdp", 8), ("spectral_pw", 8), ("spectral_sign", 8)]
    for row in rows:
        assert isinstance(row, SweepRow)
        assert row.mean_success == 1.0
        assert row.std_success == 0.0
        assert row.failures == 0
        assert row.trials == 2
        assert row.gamma == pytest.approx(0.25)
        assert row.np_gamma_sq == pytest.approx(row.n * 20 * 0.0625)

    sdp_rows = [row for row in rows if row.algorithm == "sdp"]
    assert all(row.mean_z_l1 < 1e-4 for row in sdp_rows)
    assert all(row.mean_z_l1 is None for row in rows if row.algorithm != "sdp")


def test_sweep_is_reproducible():
    first = run_sweep(_small_plan(), runner=TrialRunner(max_workers=1))
    second = run_sweep(_small_plan(), runner=TrialRunner(max_workers=4))
    for a, b in zip(first, second):
        assert a.mean_success == b.mean_success
        assert a.mean_theta_deg == b.mean_theta_deg
        assert a.mean_z_l1 == b.mean_z_l1


def test_cells_are_independent():
    """Adding a cell to the grid does not change the others"""
    alone = run_sweep(_small_plan(algorithms=["spectral_sign"]))
    wider = run_sweep(_small_plan(algorithms=["spectral_sign"], n_grid=[10, 14]))
    assert alone[0].mean_success == wider[0].mean_success
    assert alone[0].mean_theta_deg == wider[0].mean_theta_deg


def test_trial_seeds_follow_the_cell_key():
    assert derive_seed(5, 10, 40, 0) != derive_seed(5, 10, 40, 1)
    assert derive_seed(5, 10, 40, 0) != derive_seed(5, 14, 40, 0)


def test_master_seed_changes_results():
    first = run_sweep(_small_plan(algorithms=["spectral_sign"], master_seed=1))
    second = run_sweep(_small_plan(algorithms=["spectral_sign"], master_seed=2))
    assert first[0].mean_theta_deg != second[0].mean_theta_deg


def test_failed_trials_are_counted(monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr("sdpcut.services.experiments.solve", broken)
    rows = run_sweep(_small_plan(algorithms=["sdp", "spectral_sign"]))
    sdp, spectral = rows
    assert sdp.failures == 3
    assert sdp.mean_success is None
    assert spectral.failures == 0
    assert spectral.mean_success is not None


def test_angle_study_at_zero_noise():
    plan = _silent_plan(w1=0.7, n_grid=[10])
    rows = run_angles(plan)

    assert len(rows) == 1
    row = rows[0]
    assert row.failures == 0
    assert row.w1 == 0.7
    assert row.mean_theta_sdp < 0.1
    assert row.mean_phi == pytest.approx(row.reference_angle_deg, abs=0.1)
    assert row.mean_theta_1 < 1e-3
    assert row.reference_angle_deg == pytest.approx(reference_angle_deg(plan.spec_for(10, 20)))


def test_reference_angle_vanishes_for_balanced_clusters():
    balanced = make_gaussian_spec(0.5, 0.0, 20, 10, 0.5)
    skewed = make_gaussian_spec(0.5, 0.0, 20, 10, 0.7)
    assert reference_angle_deg(balanced) == pytest.approx(0.0, abs=1e-5)
    assert reference_angle_deg(skewed) == pytest.approx(math.degrees(math.acos(2 * math.sqrt(0.21))), abs=1e-10)


def test_verify_rejects_unknown_suite():
    with pytest.raises(InvalidConfigError):
        run_verify(suites=["identities", "vibes"])


def test_identity_suite_passes():
    report = run_verify(seed=0, suites=["identities"])
    assert report.checks
    assert report.passed


def test_tampered_centering_fails_identity_suite():
    def halved_lambda(X):
        cd = center(X)
        return CenteredData(Y=cd.Y, gram=cd.gram, lam=cd.lam / 2.0, tau=cd.tau)

    report = run_verify(seed=0, centering=halved_lambda, suites=["identities"])
    assert not report.passed
    assert {check.name for check in report.failures} >= {"lambda_identity"}


def test_recovery_suite_passes():
    report = run_verify(suites=["recovery"])
    names = {check.name for check in report.checks}
    assert names == {"reference_recovery", "reference_maxcut", "reference_peng_wei"}
    assert report.passed


def test_bounds_suite_passes():
    report = run_verify(seed=0, suites=["bounds"])
    assert len(report.checks) == 9
    assert report.passed


def test_raising_check_becomes_a_failed_result(monkeypatch):
    def stuck(S, spec):
        raise NonConvergenceError("Power iteration did not converge in 5 iterations", iterations=5)

    monkeypatch.setattr("sdpcut.services.experiments.davis_kahan_bound", stuck)
    report = run_verify(seed=0, suites=["bounds"])

    assert len(report.checks) == 9
    errored = [check for check in report.checks if check.error]
    assert [check.name for check in errored] == ["davis_kahan"] * 3
    assert all(not check.passed and math.isnan(check.statistic) for check in errored)
    assert errored[0].error.startswith("NonConvergenceError: Power iteration")
    assert sum(check.passed for check in report.checks) == 6


def test_raising_suite_still_reports_other_suites(monkeypatch):
    def broken(dataset, centering=center):
        raise ValueError("boom")

    monkeypatch.setattr("sdpcut.services.experiments.identity_checks", broken)
    report = run_verify(seed=0, suites=["identities", "recovery"])

    identity = [check for check in report.checks if check.name == "identities"]
    assert len(identity) == 50
    assert all(check.error == "ValueError: boom" for check in identity)
    assert {check.name for check in report.checks} - {"identities"} == {
        "reference_recovery", "reference_maxcut", "reference_peng_wei",
    }
    assert not report.passed


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1])
def test_full_verification_passes(seed):
    report = run_verify(seed=seed, suites=VERIFY_SUITES)
    failures = [(check.name, check.fingerprint, check.statistic, check.bound) for check in report.failures]
    assert not failures


def _by_n(rows, algorithm):
    return {row.n: row for row in rows if row.algorithm == algorithm}


@pytest.mark.slow
def test_low_dimension_success_stays_flat():
    """gamma = 0.0016 at p = 500: the SDP stays near coin-flipping for every n"""
    plan = ExperimentPlan(n_grid=[100, 400, 1000], p_grid=[500], trials=10, algorithms=["sdp"])
    for row in run_sweep(plan):
        assert row.failures == 0
        assert abs(row.mean_success - 0.5) <= 0.08


@pytest.mark.slow
def test_high_dimension_success_grows_with_n():
    plan = ExperimentPlan(n_grid=[50, 100, 200, 400], p_grid=[20000], trials=10,
                          algorithms=["sdp", "spectral_pw"])
    rows = run_sweep(plan)
    sdp, pw = _by_n(rows, "sdp"), _by_n(rows, "spectral_pw")

    assert sdp[200].np_gamma_sq == pytest.approx(10.24)
    assert sdp[200].mean_success >= 0.9

    means = [sdp[n].mean_success for n in (50, 100, 200, 400)]
    drops = [a - b for a, b in zip(means, means[1:]) if b < a]
    assert len(drops) <= 1 and all(drop <= 0.03 for drop in drops)

    for n, row in sdp.items():
        if row.np_gamma_sq > 1.5:
            assert row.mean_success >= pw[n].mean_success - 0.05


@pytest.mark.slow
def test_skewed_angles_shrink_with_n():
    plan = ExperimentPlan(n_grid=[100, 400], p_grid=[20000], trials=10, w1=0.7)
    small, large = run_angles(plan)

    assert large.mean_theta_sdp < small.mean_theta_sdp
    assert large.mean_theta_1 < small.mean_theta_1
    static = math.degrees(math.acos(2 * math.sqrt(0.21)))
    assert small.reference_angle_deg == pytest.approx(static, abs=1e-10)
    assert large.mean_sin_theta_sdp <= 0.5 * large.mean_sin_theta_1
    assert np.isfinite(large.mean_z_op)


@pytest.mark.slow
def test_envelope_constant_is_stable():
    """The fitted constant moves by at most 25% across reruns and a 4x change in p"""
    from sdpcut.services.verification import deviation_envelope

    baseline = deviation_envelope(make_gaussian_spec(0.2, 0.0, 400, 40, 0.5), 30, seed=0).c_hat
    rerun = deviation_envelope(make_gaussian_spec(0.2, 0.0, 400, 40, 0.5), 30, seed=1).c_hat
    wider = deviation_envelope(make_gaussian_spec(0.2, 0.0, 1600, 40, 0.5), 30, seed=0).c_hat
    assert abs(rerun / baseline - 1.0) <= 0.25
    assert abs(wider / baseline - 1.0) <= 0.25
