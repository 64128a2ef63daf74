import numpy as np
import pytest

from fcspdc_modeling.base.primitives import AmplitudeKind, BandwidthSet, FrequencyRelations, Leg, TophatFilter
from fcspdc_modeling.dispersion import load_crystal
from fcspdc_modeling.errors import EmptyBand, EmptyFilterWarning, GridMismatch, InfeasibleConstraints, ZeroAmplitude
from fcspdc_modeling.metrics import conversion_efficiency, indistinguishability, purity
from fcspdc_modeling.phasematch import get_config, solve_config_poling
from fcspdc_modeling.spectra import (
    KERNEL_NORMALIZATION,
    GaussianSurrogate,
    JointAmplitude,
    SpectralGrid,
    apply_tophat_filter,
    band_mask,
    bandwidth_for_length,
    build_amplitudes,
    design_gradients,
    effective_jsa,
    effective_jsa_by_loops,
    escort_envelope,
    jca,
    leg_gradient,
    length_for_bandwidth,
    make_design,
    marginal_width,
    normalize_kernel,
    pmf_gaussian,
    pmf_sinc,
    principal_axis_angle,
    pump_envelope,
    sideband_filter,
    symmetric_filter,
)
from tests.utilities.amplitudes import random_amplitude, rotated_gaussian, separable_gaussian, square_grid


@pytest.fixture(scope="module")
def ktp():
    return load_crystal("ktp")


def _design_bandwidths(ktp, config, relations, length_mm=10.0):
    g1, g2 = design_gradients(ktp, config, relations)
    sigma_phi = float(bandwidth_for_length(length_mm, np.linalg.norm(g1)))
    sigma_psi = float(bandwidth_for_length(length_mm, np.linalg.norm(g2)))
    return BandwidthSet(sigma_phi, sigma_phi, sigma_psi, sigma_psi)


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"points": 63}, "integer number of points"),
        ({"points": 100.5}, "integer number of points"),
        ({"half_width1": -0.1}, "positive, finite half-width"),
        ({"half_width2": 3.0}, "reaches omega <= 0"),
    ],
    ids=["few_points", "fractional", "negative_width", "nonpositive_frequency"],
)
def test_grid_validation(kwargs, match):
    args = {"center1": 2.0, "center2": 2.0, "half_width1": 0.2, "half_width2": 0.2, "points": 128} | kwargs
    with pytest.raises(ValueError, match=match):
        SpectralGrid(**args)


def test_grid_axes():
    grid = SpectralGrid(2.0, 1.0, 0.2, 0.1, 65)
    assert grid.step1 == pytest.approx(0.4 / 64)
    assert grid.step2 == pytest.approx(0.2 / 64)
    assert grid.axis1[0] == pytest.approx(1.8)
    assert grid.axis2[-1] == pytest.approx(1.1)
    assert not grid.is_square
    assert square_grid().is_square

    w1, w2 = grid.mesh()
    assert w1.shape == grid.shape
    np.testing.assert_allclose(w2[0], grid.axis2)

    flipped = grid.transposed()
    assert flipped.shares_axis(1, grid, 2)
    assert flipped.shares_axis(2, grid, 1)
    assert SpectralGrid.from_dict(grid.to_dict()) == grid


def test_joint_amplitude_validation():
    grid = square_grid(64)
    with pytest.raises(GridMismatch, match="does not fit"):
        JointAmplitude(grid, np.ones((64, 65)), AmplitudeKind.JSA)
    with pytest.raises(ValueError, match="must be finite"):
        JointAmplitude(grid, np.full(grid.shape, np.nan), AmplitudeKind.JSA)


def test_joint_amplitude_values_are_read_only():
    f = random_amplitude(0)
    assert f.values.dtype == np.complex128
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_norm_squared_integrates_with_grid_weights():
    f, _, _ = separable_gaussian(sigma1=0.02, sigma2=0.03)
    # integral of exp(-x^2 / s^2) is s sqrt(pi)
    assert f.norm_squared == pytest.approx(np.pi * 0.02 * 0.03, rel=1e-6)

    t = f.transpose()
    assert t.norm_squared == pytest.approx(f.norm_squared)
    np.testing.assert_allclose(t.values, f.values.T)


def test_pump_envelope_is_flat_along_antidiagonal():
    grid = square_grid(129)
    alpha = pump_envelope(grid, 0.01, grid.center1 + grid.center2)
    assert alpha.kind == AmplitudeKind.ENVELOPE
    np.testing.assert_allclose(np.diag(np.fliplr(alpha.values)).real, 1.0, rtol=1e-12)
    assert alpha.values[0, 0].real < 1e-10

    with pytest.raises(ValueError, match="sigma_p must be positive"):
        pump_envelope(grid, 0.0, 4.0)


def test_escort_envelope_is_flat_along_diagonal():
    grid = SpectralGrid(1.0, 3.0, 0.2, 0.2, 129)
    beta = escort_envelope(grid, 0.01, 2.0)
    np.testing.assert_allclose(np.diag(beta.values).real, 1.0, rtol=1e-12)
    assert beta.values[0, -1].real < 1e-10


@pytest.mark.parametrize("length_mm", [1.0, 10.0, 30.0])
def test_length_and_bandwidth_are_inverse(length_mm):
    sigma = bandwidth_for_length(length_mm, 0.2)
    assert length_for_bandwidth(sigma, 0.2) == pytest.approx(length_mm)


def test_pmf_peaks_where_phase_matched(ktp):
    config = get_config(ktp, "II")
    rel = FrequencyRelations(1000.0)
    poling = solve_config_poling(ktp, config, Leg.SPDC, rel)
    grid = SpectralGrid(rel.omega_signal, rel.omega_idler, 0.01, 0.01, 65)

    phi = pmf_sinc(grid, ktp, config, Leg.SPDC, poling)
    assert phi.kind == AmplitudeKind.PMF
    assert phi.values[32, 32].real == pytest.approx(1.0, abs=1e-9)
    assert np.abs(phi.values).max() <= 1.0 + 1e-12

    gauss = pmf_gaussian(grid, ktp, config, Leg.SPDC, poling, 0.002)
    assert gauss.values[32, 32].real == pytest.approx(1.0, abs=1e-9)


def test_pmf_validation(ktp):
    config = get_config(ktp, "II")
    rel = FrequencyRelations(1000.0)
    poling = solve_config_poling(ktp, config, Leg.SPDC, rel)
    grid = SpectralGrid(rel.omega_signal, rel.omega_idler, 0.01, 0.01, 65)
    with pytest.raises(ValueError, match="Region length"):
        pmf_sinc(grid, ktp, config, Leg.SPDC, poling, length_mm=0.5)
    with pytest.raises(ValueError, match="must be positive"):
        pmf_gaussian(grid, ktp, config, Leg.SPDC, poling, 0.0)


def _angle_difference(a, b):
    return (a - b + 90.0) % 180.0 - 90.0


@pytest.mark.parametrize("lambda_deg_nm", [780.0, 1000.0])
@pytest.mark.parametrize("leg", [Leg.SPDC, Leg.SFC], ids=["spdc", "sfc"])
def test_sinc_and_gaussian_pmf_share_orientation(ktp, leg, lambda_deg_nm):
    config = get_config(ktp, "II")
    rel = FrequencyRelations(lambda_deg_nm)
    poling = solve_config_poling(ktp, config, leg, rel, length_mm=10.0)
    if leg == Leg.SPDC:
        center1, center2 = rel.omega_signal, rel.omega_idler
    else:
        center1, center2 = rel.omega_idler, rel.omega_converted
    center_grid = SpectralGrid(center1, center2, 0.01, 0.01, 65)
    gradient = leg_gradient(center_grid, ktp, config, leg)
    sigma = float(bandwidth_for_length(10.0, np.linalg.norm(gradient)))
    grid = SpectralGrid(center1, center2, 12 * sigma, 12 * sigma, 257)

    # Isotropic window about the phase-matched point
    w1, w2 = grid.mesh()
    window = np.exp(-((w1 - center1) ** 2 + (w2 - center2) ** 2) / (2 * (4 * sigma) ** 2))
    sinc = pmf_sinc(grid, ktp, config, leg, poling)
    gauss = pmf_gaussian(grid, ktp, config, leg, poling, sigma)
    sinc_angle = principal_axis_angle(sinc.with_values(sinc.values * window))
    gauss_angle = principal_axis_angle(gauss.with_values(gauss.values * window))

    ridge_angle = float(np.degrees(np.arctan2(gradient[0], -gradient[1])))
    assert abs(_angle_difference(sinc_angle, gauss_angle)) < 1.0
    assert abs(_angle_difference(gauss_angle, ridge_angle)) < 1.0
    assert sinc.values[128, 128].real == pytest.approx(1.0, abs=1e-9)
    assert gauss.values[128, 128].real == pytest.approx(1.0, abs=1e-9)


def _contraction_pair(seed=0, points=64):
    f_jsa = random_amplitude(seed, points)
    jca_grid = SpectralGrid(f_jsa.grid.center2, 3.0, f_jsa.grid.half_width2, 0.2, points)
    rng = np.random.default_rng(seed + 1)
    f_jca = JointAmplitude(jca_grid, rng.normal(size=jca_grid.shape), AmplitudeKind.JCA)
    return f_jsa, f_jca


def test_effective_jsa_matches_loop_contraction():
    f_jsa, f_jca = _contraction_pair()
    fast = effective_jsa(f_jca, f_jsa)
    slow = effective_jsa_by_loops(f_jca, f_jsa)

    assert fast.kind == AmplitudeKind.EFFECTIVE
    assert fast.grid.center1 == f_jsa.grid.center1
    assert fast.grid.center2 == 3.0
    assert np.linalg.norm(fast.values - slow.values) / np.linalg.norm(fast.values) < 1e-12


def test_effective_jsa_requires_shared_idler_axis():
    f_jsa, f_jca = _contraction_pair()
    shifted = JointAmplitude(
        SpectralGrid(f_jca.grid.center1 + 0.01, 3.0, f_jca.grid.half_width1, 0.2, f_jca.grid.points),
        f_jca.values,
        AmplitudeKind.JCA,
    )
    with pytest.raises(GridMismatch, match="idler axis"):
        effective_jsa(shifted, f_jsa)


def test_normalize_kernel():
    f = random_amplitude(4)
    kernel = normalize_kernel(f)
    weighted = kernel.values * np.sqrt(kernel.grid.step1 * kernel.grid.step2)
    assert np.linalg.svd(weighted, compute_uv=False)[0] == pytest.approx(1.0, abs=1e-9)
    assert kernel.normalization == KERNEL_NORMALIZATION

    with pytest.raises(ZeroAmplitude):
        normalize_kernel(f.with_values(np.zeros(f.grid.shape)))


def test_jca_requires_matching_factor_grids():
    grid = square_grid(64)
    beta = JointAmplitude(grid, np.ones(grid.shape), AmplitudeKind.ENVELOPE)
    psi = JointAmplitude(square_grid(65), np.ones((65, 65)), AmplitudeKind.PMF)
    with pytest.raises(GridMismatch):
        jca(beta, psi)


def test_tophat_filter_zeroes_outside_band():
    f, _, _ = separable_gaussian(grid=square_grid(129))
    grid = f.grid
    tophat = symmetric_filter(grid, 10)
    filtered = apply_tophat_filter(f, tophat)

    mask1 = band_mask(grid, 1, tophat.band1_nm)
    assert mask1.sum() == 21
    assert np.all(filtered.values[~mask1, :] == 0)
    np.testing.assert_allclose(filtered.values[64, 64], f.values[64, 64])
    assert not f.is_zero


def test_zero_width_filter_warns():
    f = random_amplitude(0)
    with pytest.warns(EmptyFilterWarning, match="Zero-width"):
        filtered = apply_tophat_filter(f, (900.0, 900.0), (900.0, 950.0))
    assert filtered.is_zero


def test_filter_outside_grid_raises():
    f = random_amplitude(0)
    with pytest.raises(EmptyBand, match="do not overlap"):
        apply_tophat_filter(f, TophatFilter((100.0, 200.0), (100.0, 200.0)))


@pytest.mark.parametrize("angle", [30.0, -45.0, 60.0], ids=["30", "-45", "60"])
def test_principal_axis_angle(angle):
    f = rotated_gaussian(0.05, 0.01, angle, grid=square_grid(129))
    assert principal_axis_angle(f) == pytest.approx(angle, abs=0.1)


def test_marginal_width_is_twice_intensity_std():
    f, _, _ = separable_gaussian(sigma1=0.02, sigma2=0.04)
    # |exp(-x^2 / 2 s^2)|^2 has standard deviation s / sqrt(2)
    assert marginal_width(f, 1) == pytest.approx(np.sqrt(2) * 0.02, rel=1e-6)
    assert marginal_width(f, 2) == pytest.approx(np.sqrt(2) * 0.04, rel=1e-6)

    with pytest.raises(ZeroAmplitude):
        marginal_width(f.with_values(np.zeros(f.grid.shape)))


def test_sideband_filter_keeps_sinc_main_lobe():
    grid = square_grid(129)
    x = grid.axis1 - grid.center1
    zero = 0.05
    g2 = np.exp(-((grid.axis2 - grid.center2) ** 2) / (2 * 0.01**2))
    f = JointAmplitude(grid, np.outer(np.sinc(x / zero), g2), AmplitudeKind.EFFECTIVE)

    tophat = sideband_filter(f)
    kept = x[band_mask(grid, 1, tophat.band1_nm)]
    assert 0.75 * zero < kept.max() < zero
    assert kept.min() == pytest.approx(-kept.max())
    assert tophat.band1_nm == pytest.approx(tophat.band2_nm)

    with pytest.raises(ZeroAmplitude):
        sideband_filter(f.with_values(np.zeros(grid.shape)))


class TestGaussianSurrogate:
    def test_closed_forms(self):
        assert GaussianSurrogate.purity_of((1.0, 0.0, 1.0)) == pytest.approx(1.0)
        assert GaussianSurrogate.indistinguishability_of((1.0, 0.0, 1.0)) == pytest.approx(1.0)
        assert GaussianSurrogate.indistinguishability_of((1.0, 0.0, 9.0)) == pytest.approx(0.6)
        assert GaussianSurrogate.purity_of((2.0, 1.0, 2.0)) == pytest.approx(np.sqrt(0.75))

    def test_uncorrelated_jsa_gives_separable_output(self):
        jsa_form = (4.0, 0.0, 9.0)
        jca_form = (3.0, -1.0, 2.0)
        a, b, c = GaussianSurrogate.effective_form(jsa_form, jca_form)
        assert a == 4.0
        assert b == 0.0
        assert c == pytest.approx(2.0 - 1.0 / 12.0)

    def test_degenerate_forms_give_nan(self):
        # Pump envelope and SPDC ridge both constrain omega_s + omega_i only
        surrogate = GaussianSurrogate(np.array([1.0, 1.0]), np.array([1.0, 0.5]))
        out = surrogate.evaluate(0.01, 0.01, 0.01, 0.01)
        assert np.isnan(out["purity"])
        assert np.isnan(out["efficiency"])

    def test_broadcasts_over_bandwidth_arrays(self):
        surrogate = GaussianSurrogate(np.array([0.05, -0.1]), np.array([0.08, 0.02]))
        sigma = np.linspace(0.001, 0.01, 7)
        out = surrogate.evaluate(sigma, 0.005, sigma[:, None], 0.005)
        assert out["purity"].shape == (7, 7)
        assert np.all((out["purity"] > 0) & (out["purity"] <= 1))
        assert np.all((out["efficiency"] > 0) & (out["efficiency"] <= 1 + 1e-12))

    def test_matches_discretized_design(self, ktp):
        config = get_config(ktp, "II")
        rel = FrequencyRelations(1000.0)
        bandwidths = _design_bandwidths(ktp, config, rel)
        design = make_design(ktp, 1000.0, config, "gaussian", bandwidths)
        assert design.spdc_poling.length_mm == pytest.approx(10.0)
        assert design.sfc_poling.length_mm == pytest.approx(10.0)

        amps = build_amplitudes(ktp, design, points=384)
        g1, g2 = design_gradients(ktp, config, rel)
        stats = GaussianSurrogate(g1, g2).evaluate(*bandwidths.as_array())

        assert purity(amps.effective) == pytest.approx(float(stats["purity"]), abs=0.02)
        assert indistinguishability(amps.effective) == pytest.approx(float(stats["indistinguishability"]), abs=0.02)
        assert conversion_efficiency(amps.effective, amps.jsa) == pytest.approx(float(stats["efficiency"]), abs=0.02)
        assert marginal_width(amps.effective, 1) == pytest.approx(float(stats["output_bandwidth"]), rel=0.02)
        assert amps.effective.grid.is_square


def test_make_design_rejects_short_regions(ktp):
    config = get_config(ktp, "II")
    rel = FrequencyRelations(1000.0)
    bandwidths = _design_bandwidths(ktp, config, rel, length_mm=0.5)
    with pytest.raises(InfeasibleConstraints, match="outside"):
        make_design(ktp, 1000.0, config, "gaussian", bandwidths)
