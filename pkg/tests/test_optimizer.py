import json

import numpy as np
import pytest

from fcspdc_modeling.base.primitives import BandwidthSet, Crystal, FrequencyRelations, PMFKind, PolingSpec
from fcspdc_modeling.dispersion import load_crystal
from fcspdc_modeling.errors import (
    BelowCutoff,
    ConstraintWarning,
    EmptyInterval,
    InfeasibleConstraints,
    OutOfRange,
)
from fcspdc_modeling.metrics import MetricsReport, evaluate_output
from fcspdc_modeling.optimizer import (
    OptimizationConstraints,
    SweepResult,
    _append_checkpoint,
    _rescale_to_target,
    _resolve_target,
    conventional_degenerate,
    feasible_output_bandwidths,
    nelder_mead_runs,
    optimize_bandwidths,
    read_checkpoint,
    select_configuration,
    sweep,
    sweep_wavelengths,
)
from fcspdc_modeling.phasematch import get_config
from fcspdc_modeling.spectra import GaussianSurrogate, bandwidth_for_length, build_amplitudes, design_gradients


@pytest.fixture(scope="module")
def ktp():
    return load_crystal("ktp")


@pytest.fixture(scope="module")
def ln():
    return load_crystal("ln")


def _sweep_result(lambda_deg_nm=780.0):
    report = MetricsReport(
        purity=0.995,
        indistinguishability=0.99,
        schmidt_number=1 / 0.995,
        heralding_efficiency=1.0,
        pair_pass_probability=1.0,
        single_pass_probability=1.0,
        output_bandwidth=0.01,
        conversion_efficiency=0.9,
        meta={"pmf_kind": "gaussian"},
    )
    return SweepResult(
        lambda_deg_nm=lambda_deg_nm,
        crystal=Crystal.KTP,
        pmf_kind=PMFKind.GAUSSIAN,
        config_id="II",
        bandwidths=BandwidthSet(0.01, 0.012, 0.015, 0.009, output_bandwidth=0.01),
        report=report,
        spdc_poling=PolingSpec(45.0, direction=-1, length_mm=12.0),
        sfc_poling=PolingSpec(20.0, length_mm=8.0),
        output_interval=(0.001, 0.05),
        candidate_eta={"I": 0.9, "II": report.purity * report.indistinguishability},
        config_errors={"III": "InfeasibleConstraints: no candidate"},
    )


class TestConstraints:
    @pytest.mark.parametrize(
        "kwargs, match",
        [
            ({"ratio_limit": 0.5}, "ratio_limit"),
            ({"normalized_bounds": (6.0, 0.1)}, "low <= high"),
            ({"region_length_mm": (0.5, 10.0)}, "region_length_mm must lie inside"),
            ({"pulse_duration_fs": (0.0, 10.0)}, "strictly positive"),
        ],
        ids=["ratio", "bounds_order", "length", "duration"],
    )
    def test_validation(self, kwargs, match):
        with pytest.raises(ValueError, match=match):
            OptimizationConstraints(**kwargs)

    def test_sigma_ranges(self):
        c = OptimizationConstraints()
        env_lo, env_hi = c.envelope_sigma_range
        assert 0 < env_lo < env_hi
        pmf_lo, pmf_hi = c.pmf_sigma_range(0.2)
        assert pmf_lo == pytest.approx(bandwidth_for_length(30.0, 0.2))
        assert pmf_hi == pytest.approx(bandwidth_for_length(1.0, 0.2))

    def test_feasible_mask_and_violations(self):
        c = OptimizationConstraints()
        x = np.array(
            [
                [1.0, 1.0, 1.0, 1.0],
                [1.0, 1.0, 3.0, 1.0],
                [1.0, 1.0, 1.0, 0.05],
            ]
        )
        np.testing.assert_array_equal(c.feasible_mask(x, 0.01, 0.2, 0.2), [True, False, False])

        assert c.violations(BandwidthSet(*(x[0] * 0.01), output_bandwidth=0.01), 0.2, 0.2) == []
        assert c.violations(BandwidthSet(*(x[1] * 0.01), output_bandwidth=0.01), 0.2, 0.2) == ["envelope_ratio"]
        assert c.violations(BandwidthSet(*(x[2] * 0.01), output_bandwidth=0.01), 0.2, 0.2) == [
            "sigma_psi_normalized",
            "pmf_ratio",
            "sigma_psi_region_length",
        ]

    def test_exact_boundary_is_feasible(self):
        c = OptimizationConstraints()
        x = np.array([2.0, 1.0, 1.0, 1.0])
        assert c.feasible_mask(x, 0.01, 0.2, 0.2)

    def test_violations_need_output_bandwidth(self):
        with pytest.raises(ValueError, match="output bandwidth"):
            OptimizationConstraints().violations(BandwidthSet(0.01, 0.01, 0.01, 0.01), 0.2, 0.2)

    def test_to_dict(self):
        assert OptimizationConstraints().to_dict()["normalized_bounds"] == [0.1, 6.0]


def test_feasible_output_bandwidths(ktp):
    low, high = feasible_output_bandwidths(ktp, 1000.0, "II")
    assert 0 < low < high


def test_fixed_lengths_with_unit_ratio_leave_no_interval(ktp):
    constraints = OptimizationConstraints(ratio_limit=1.0, region_length_mm=(1.0, 1.0))
    with pytest.raises(EmptyInterval, match="differ by more than"):
        feasible_output_bandwidths(ktp, 1000.0, "II", constraints)
    with pytest.raises(InfeasibleConstraints):
        optimize_bandwidths(ktp, 1000.0, "II", "gaussian", constraints)


def _rescale_inputs(ktp, lambda_deg_nm=1000.0, envelope_ratio=1.0):
    config = get_config(ktp, "II")
    g1, g2 = design_gradients(ktp, config, FrequencyRelations(lambda_deg_nm))
    sigma_phi = float(bandwidth_for_length(10.0, np.linalg.norm(g1)))
    sigma_psi = float(bandwidth_for_length(10.0, np.linalg.norm(g2)))
    sigma = np.array([envelope_ratio * sigma_phi, sigma_phi, sigma_phi, sigma_psi])
    target = float(GaussianSurrogate(g1, g2).evaluate(*sigma)["output_bandwidth"])
    return config, sigma, target, (float(np.linalg.norm(g1)), float(np.linalg.norm(g2)))


class TestRescaleToTarget:
    def test_result_satisfies_constraints(self, ktp):
        config, sigma, target, norms = _rescale_inputs(ktp)
        constraints = OptimizationConstraints(ratio_limit=100.0, normalized_bounds=(0.01, 100.0))
        design, report = _rescale_to_target(ktp, 1000.0, config, "gaussian", sigma, target, 128, constraints, norms)
        assert report.output_bandwidth == pytest.approx(target, rel=0.01)
        assert design.bandwidths.output_bandwidth == report.output_bandwidth
        assert constraints.violations(design.bandwidths, *norms, rtol=1e-3) == []

    def test_broken_constraint_raises(self, ktp):
        config, sigma, target, norms = _rescale_inputs(ktp, envelope_ratio=1.5)
        constraints = OptimizationConstraints(ratio_limit=1.2, normalized_bounds=(0.01, 100.0))
        with pytest.raises(InfeasibleConstraints, match="envelope_ratio"):
            _rescale_to_target(ktp, 1000.0, config, "gaussian", sigma, target, 128, constraints, norms)

    def test_optimizer_rejects_starts_that_break_constraints(self, ktp, monkeypatch):
        def reject(*args):
            raise InfeasibleConstraints("Rescaled bandwidths break envelope_ratio")

        monkeypatch.setattr("fcspdc_modeling.optimizer._rescale_to_target", reject)
        with pytest.raises(InfeasibleConstraints, match="no candidate produced a valid output state: Rescaled"):
            optimize_bandwidths(ktp, 1000.0, "II", "gaussian", n_starts=1, search_points=64, maxiter=5)


class TestNelderMeadRuns:
    @staticmethod
    def quadratic(x):
        return float(np.sum((np.asarray(x) - 1.0) ** 2))

    def test_finds_minimum(self):
        runs = nelder_mead_runs(self.quadratic, [[0.0, 0.0], [3.0, 3.0]], xatol=1e-6, fatol=1e-10)
        assert len(runs) == 2
        for x, value, n_eval in runs:
            np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-3)
            assert value < 1e-6
            assert n_eval > 0

    def test_is_deterministic(self):
        [first] = nelder_mead_runs(self.quadratic, [[0.0, 0.0]], seed=3)
        [second] = nelder_mead_runs(self.quadratic, [[0.0, 0.0]], seed=3)
        np.testing.assert_array_equal(first[0], second[0])
        assert first[1] == second[1]

    def test_added_starts_keep_earlier_runs(self):
        few = nelder_mead_runs(self.quadratic, [[0.0, 0.0]], seed=5, maxiter=20)
        more = nelder_mead_runs(self.quadratic, [[0.0, 0.0], [2.0, 0.5]], seed=5, maxiter=20)
        np.testing.assert_array_equal(few[0][0], more[0][0])
        assert few[0][1:] == more[0][1:]

    def test_respects_feasibility(self):
        [(x, value, _)] = nelder_mead_runs(
            self.quadratic, [[2.0, 2.0]], is_feasible=lambda x: x[0] >= 1.5, maxiter=100
        )
        assert x[0] >= 1.5
        assert value == pytest.approx(self.quadratic(x))

    def test_infeasible_everywhere(self):
        [(x, value, n_eval)] = nelder_mead_runs(
            self.quadratic, [[0.0, 0.0]], is_feasible=lambda x: False, maxiter=10
        )
        assert x is None
        assert value == np.inf
        assert n_eval > 0


class TestResolveTarget:
    def test_default_is_geometric_mean(self):
        assert _resolve_target((0.01, 1.0), None) == pytest.approx(0.1)

    def test_inside_interval(self):
        assert _resolve_target((0.01, 1.0), 0.5) == 0.5

    def test_outside_interval_is_clamped(self):
        with pytest.warns(ConstraintWarning, match="outside the feasible interval"):
            assert _resolve_target((0.01, 1.0), 2.0) == 1.0


class TestSweepWavelengths:
    def test_inclusive_range(self, ktp):
        np.testing.assert_allclose(sweep_wavelengths(ktp, (700.0, 800.0), 50.0), [700.0, 750.0, 800.0])
        np.testing.assert_allclose(sweep_wavelengths(ktp, (700.0, 790.0), 50.0), [700.0, 750.0])

    @pytest.mark.parametrize("lambda_range", [(460.0, 800.0), (700.0, 1700.0)], ids=["below_limit", "above_1600"])
    def test_out_of_range(self, ktp, lambda_range):
        with pytest.raises(OutOfRange, match="must lie inside"):
            sweep_wavelengths(ktp, lambda_range)

    def test_ln_limit(self, ln):
        with pytest.raises(OutOfRange):
            sweep_wavelengths(ln, (520.0, 600.0))
        assert sweep_wavelengths(ln, (540.0, 560.0), 10.0)[0] == 540.0

    def test_step_must_be_positive(self, ktp):
        with pytest.raises(ValueError, match="step_nm"):
            sweep_wavelengths(ktp, (700.0, 800.0), 0.0)


@pytest.mark.parametrize("crystal, lambda_deg", [("ktp", 460.0), ("ln", 530.0)], ids=["ktp", "ln"])
def test_select_configuration_below_cutoff(crystal, lambda_deg):
    with pytest.raises(BelowCutoff, match="frequency-conversion limit"):
        select_configuration(load_crystal(crystal), lambda_deg, "sinc")


def test_conventional_source_below_cutoff(ktp):
    with pytest.raises(BelowCutoff, match="degenerate pump at 325 nm"):
        conventional_degenerate(ktp, 650.0)


class TestSweepResult:
    def test_to_row(self):
        row = _sweep_result().to_row()
        assert row["config"] == "II"
        assert row["eta"] == pytest.approx(0.995 * 0.99)
        assert row["sigma_e_norm"] == pytest.approx(1.5)
        assert row["direction_spdc"] == -1
        assert row["length_sfc_mm"] == 8.0
        assert row["sigma_out_max_rad_per_fs"] == 0.05
        assert np.isnan(row["conventional_purity"])

    def test_dict_round_trip_through_json(self):
        result = _sweep_result()
        parsed = SweepResult.from_dict(json.loads(json.dumps(result.to_dict())))
        assert parsed.config_id == "II"
        assert parsed.crystal == Crystal.KTP
        assert parsed.bandwidths == result.bandwidths
        assert parsed.spdc_poling == result.spdc_poling
        assert parsed.report.purity == result.report.purity
        assert parsed.output_interval == result.output_interval
        assert parsed.config_errors == result.config_errors


def test_read_checkpoint_skips_errors(tmp_path):
    path = tmp_path / "sweep.jsonl"
    _append_checkpoint(path, "error", {"lambda_deg_nm": 770.0, "error_type": "BelowCutoff", "message": "x"})
    _append_checkpoint(path, "ok", _sweep_result(780.0).to_dict())
    done = read_checkpoint(path)
    assert list(done) == [780.0]
    assert read_checkpoint(tmp_path / "missing.jsonl") == {}


def test_sweep_resumes_from_checkpoint(ktp, tmp_path):
    path = tmp_path / "sweep.jsonl"
    _append_checkpoint(path, "ok", _sweep_result(780.0).to_dict())

    table = sweep(ktp, wavelengths=[780.0], pmf_kind="gaussian", checkpoint=path, progressbar=False)
    assert table.n_points == 1
    assert table.results[0].config_id == "II"
    assert table.to_frame()["lambda_deg_nm"].tolist() == [780.0]
    assert len(path.read_text().splitlines()) == 1


def test_sweep_records_failing_points(ktp, tmp_path):
    path = tmp_path / "sweep.jsonl"
    table = sweep(
        ktp, wavelengths=[460.0], include_conventional=False, checkpoint=path, progressbar=False
    )
    assert table.results == []
    assert table.success_fraction == 0.0
    errors = table.errors_frame()
    assert errors["error_type"].tolist() == ["BelowCutoff"]
    assert json.loads(path.read_text())["status"] == "error"


def test_sweep_needs_wavelengths(ktp):
    with pytest.raises(ValueError, match="lambda_range_nm or wavelengths"):
        sweep(ktp, progressbar=False)


@pytest.mark.slow
class TestAcceptance:
    def test_conventional_sinc_purity_at_1550(self, ktp):
        result = conventional_degenerate(ktp, 1550.0, "sinc")
        assert 0.79 <= result.unfiltered_purity <= 0.85
        assert result.report.purity >= 0.99
        assert result.poling.period_um == pytest.approx(46.0, abs=2.0)

    def test_conventional_gaussian_purity_at_1550(self, ktp):
        result = conventional_degenerate(ktp, 1550.0, "gaussian")
        assert result.unfiltered_purity >= 0.97

    def test_filtering_costs_more_away_from_symmetric_gvm(self, ktp):
        near = conventional_degenerate(ktp, 1550.0, "sinc")
        far = conventional_degenerate(ktp, 800.0, "sinc")
        short = conventional_degenerate(ktp, 750.0, "sinc")
        assert far.report.pair_pass_probability < near.report.pair_pass_probability
        assert short.report.pair_pass_probability < 0.10

    @pytest.mark.parametrize("pmf_kind", ["sinc", "gaussian"])
    def test_conventional_purity_converges_with_grid(self, ktp, pmf_kind):
        coarse = conventional_degenerate(ktp, 1550.0, pmf_kind, points=256)
        fine = conventional_degenerate(ktp, 1550.0, pmf_kind, points=512)
        assert coarse.sigma_p == fine.sigma_p
        assert abs(fine.unfiltered_purity - coarse.unfiltered_purity) < 1e-3

    def test_fc_source_converges_with_grid(self, ktp):
        result = optimize_bandwidths(ktp, 780.0, "II", "gaussian", grid_points=256)
        coarse, fine = (
            evaluate_output(amps.effective, amps.jsa, "gaussian")
            for amps in (build_amplitudes(ktp, result.design, points=n) for n in (256, 512))
        )
        assert abs(fine.purity - coarse.purity) < 1e-3
        assert abs(fine.indistinguishability - coarse.indistinguishability) < 1e-3
        assert abs(fine.conversion_efficiency - coarse.conversion_efficiency) < 1e-3

    @pytest.mark.parametrize("pmf_kind", ["sinc", "gaussian"])
    def test_more_starts_never_lower_eta(self, ktp, pmf_kind):
        few = optimize_bandwidths(ktp, 900.0, "II", pmf_kind, n_starts=2, grid_points=256)
        more = optimize_bandwidths(ktp, 900.0, "II", pmf_kind, n_starts=4, grid_points=256)
        assert more.eta >= few.eta
        assert more.n_evaluations > few.n_evaluations

    def test_gaussian_fc_source_at_780(self, ktp):
        result = optimize_bandwidths(ktp, 780.0, "II", "gaussian")
        assert result.report.purity >= 0.99
        assert result.report.indistinguishability >= 0.99
        assert 0 < result.report.conversion_efficiency <= 1

    def test_select_configuration_at_780(self, ktp):
        result = select_configuration(ktp, 780.0, "gaussian", configs=["I", "II"])
        assert result.config_id in result.candidate_eta
        assert result.eta == max(result.candidate_eta.values())
