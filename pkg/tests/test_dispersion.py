import numpy as np
import pytest

from fcspdc_modeling.base.primitives import Axis, Crystal, Leg
from fcspdc_modeling.base.utilities import C_UM_PER_FS, omega_to_wavelength, wavelength_to_omega
from fcspdc_modeling.dispersion import (
    DEFAULT_DATA_FILE,
    check_energy_conservation,
    load_crystal,
    momentum_balance,
    refractive_index,
    solve_poling_period,
)
from fcspdc_modeling.errors import (
    EnergyMismatch,
    InvalidConfiguration,
    NoPhaseMatch,
    OutOfRange,
    SellmeierExtrapolationWarning,
    UnknownAxis,
)
from fcspdc_modeling.phasematch import TYPE2_DEGENERATE, spdc_mismatch
from fcspdc_modeling.tools.sympy_tools import compile_inverse_group_velocity


@pytest.fixture(scope="module")
def ktp():
    return load_crystal("ktp")


@pytest.fixture(scope="module")
def ln():
    return load_crystal("ln")


@pytest.mark.parametrize(
    "crystal, axis, wavelength, expected, tol",
    [
        ("ktp", "z", 1064.0, 1.830, 0.005),
        ("ln", "y", 1064.0, 2.23, 0.01),
        ("ln", "z", 1064.0, 2.156, 0.01),
    ],
    ids=["ktp_z", "ln_ordinary", "ln_extraordinary"],
)
def test_refractive_index(crystal, axis, wavelength, expected, tol):
    assert refractive_index(crystal, axis, wavelength) == pytest.approx(expected, abs=tol)


def test_refractive_index_keeps_shape(ktp):
    lam = np.linspace(500.0, 2000.0, 12).reshape(3, 4)
    n = ktp.refractive_index("y", lam)
    assert n.shape == (3, 4)
    assert isinstance(ktp.refractive_index("y", 800.0), float)


def test_ktp_is_biaxial(ktp):
    nx, ny, nz = (ktp.refractive_index(axis, 1064.0) for axis in "xyz")
    assert nx < ny < nz
    assert not ktp.is_uniaxial


def test_wave_number(ktp):
    n = ktp.refractive_index(Axis.Z, 1064.0)
    assert ktp.wave_number(Axis.Z, 1064.0) == pytest.approx(2 * np.pi * n / 1.064)
    omega = wavelength_to_omega(1064.0)
    assert ktp.wave_number_at_omega(Axis.Z, omega) == pytest.approx(ktp.wave_number(Axis.Z, 1064.0))


@pytest.mark.parametrize("axis", ["x", "y", "z"])
@pytest.mark.parametrize("wavelength", [600.0, 1064.0, 2340.0], ids=["600", "1064", "2340"])
def test_inverse_group_velocity_matches_five_point_stencil(ktp, axis, wavelength):
    omega = float(wavelength_to_omega(wavelength))
    h = 1e-3 * omega

    def k(w):
        return ktp.refractive_index(axis, omega_to_wavelength(w)) * w / C_UM_PER_FS

    stencil = (-k(omega + 2 * h) + 8 * k(omega + h) - 8 * k(omega - h) + k(omega - 2 * h)) / (12 * h)
    assert ktp.inverse_group_velocity(axis, wavelength) == pytest.approx(stencil, rel=1e-6)


def test_inverse_group_velocity_matches_closed_form(ln):
    sellmeier = ln.axes[Axis.Z]
    exact = compile_inverse_group_velocity(sellmeier.form, sellmeier.coefficients)
    lam = np.array([700.0, 1000.0, 1550.0, 3000.0])
    np.testing.assert_allclose(ln.inverse_group_velocity("z", lam), exact(lam * 1e-3), rtol=1e-8)


def test_group_index_exceeds_phase_index(ktp):
    # Normal dispersion in the visible and near infrared
    n = ktp.refractive_index("z", 800.0)
    assert C_UM_PER_FS * ktp.inverse_group_velocity("z", 800.0) > n


@pytest.mark.parametrize("wavelength", [300.0, 6000.0, np.nan], ids=["short", "long", "nan"])
def test_out_of_range_raises(ktp, wavelength):
    with pytest.raises(OutOfRange):
        ktp.refractive_index("z", wavelength)


def test_edge_of_window_raises_for_derivative(ktp):
    with pytest.raises(OutOfRange, match="too close"):
        ktp.inverse_group_velocity("z", 5000.0)


def test_extrapolation_warns(ktp):
    with pytest.warns(SellmeierExtrapolationWarning, match="outside its fitted range"):
        ktp.refractive_index("y", 400.0)


def test_uniaxial_x_axis(ln):
    assert ln.is_uniaxial
    assert ln.refractive_index("x", 1064.0) == ln.refractive_index("y", 1064.0)

    strict = load_crystal("ln", strict_axes=True)
    with pytest.raises(UnknownAxis, match="uniaxial"):
        strict.refractive_index("x", 1064.0)


def test_cutoffs():
    ktp, ln, mgln = (load_crystal(c) for c in ("ktp", "ln", "mgln"))
    assert ktp.fc_lower_limit_nm == pytest.approx(466.0, abs=10.0)
    assert ln.fc_lower_limit_nm == pytest.approx(534.0, abs=10.0)
    assert mgln.cutoff_nm == ln.cutoff_nm
    assert ktp.valid_range_nm == (340.0, 5000.0)


def test_temperature_shifts_only_tabulated_axes():
    cold = load_crystal("ktp")
    hot = load_crystal("ktp", temperature_c=80.0)
    assert hot.temperature_c == 80.0
    assert hot.refractive_index("z", 1064.0) > cold.refractive_index("z", 1064.0)
    assert hot.refractive_index("x", 1064.0) == cold.refractive_index("x", 1064.0)
    assert cold.with_temperature(80.0).refractive_index("z", 1064.0) == hot.refractive_index("z", 1064.0)


def test_load_crystal_is_cached():
    assert load_crystal("ktp") is load_crystal(Crystal.KTP, DEFAULT_DATA_FILE)


def test_missing_data_file_falls_back_to_packaged(tmp_path, caplog):
    disp = load_crystal("ktp", tmp_path / "missing.toml")
    assert disp.refractive_index("z", 1064.0) == load_crystal("ktp").refractive_index("z", 1064.0)
    assert "not found" in caplog.text


def test_data_file_without_crystal_raises(tmp_path):
    path = tmp_path / "sellmeier.toml"
    path.write_text(
        'version = "test"\n'
        "[[sellmeier]]\n"
        'crystal = "ln"\naxis = "ordinary"\nform = "zelmon"\n'
        "coefficients = [2.6734, 0.01764, 1.2290, 0.05914, 12.614, 474.6]\n"
        "valid_range_nm = [350.0, 5500.0]\ncutoff_nm = 400.5\n"
    )
    with pytest.raises(InvalidConfiguration, match="No Sellmeier coefficients for ktp"):
        load_crystal("ktp", path)


@pytest.mark.parametrize(
    "leg, wavelengths",
    [("spdc", (775.0, 1550.0, 1550.0)), ("sfc", (1170.0, 2340.0, 780.0))],
    ids=["spdc", "sfc"],
)
def test_energy_conservation_accepts(leg, wavelengths):
    check_energy_conservation(leg, wavelengths)


@pytest.mark.parametrize(
    "leg, wavelengths",
    [("spdc", (775.0, 1550.0, 1551.0)), ("sfc", (1170.0, 2340.0, 781.0)), ("spdc", (775.0, -1.0, 1.0))],
    ids=["spdc", "sfc", "negative"],
)
def test_energy_conservation_raises(leg, wavelengths):
    with pytest.raises(EnergyMismatch):
        check_energy_conservation(leg, wavelengths)


def test_ppktp_type2_period(ktp):
    # Pump and signal on the low-index y axis: k_p < k_s + k_i, compensated by a reversed grating
    poling = solve_poling_period(ktp, TYPE2_DEGENERATE, Leg.SPDC, (775.0, 1550.0, 1550.0))
    assert poling.period_um == pytest.approx(46.0, abs=2.0)
    assert poling.direction == -1
    assert poling.length_mm == 10.0


def test_solved_period_cancels_mismatch(ktp):
    wavelengths = (775.0, 1550.0, 1550.0)
    poling = solve_poling_period(ktp, TYPE2_DEGENERATE, Leg.SPDC, wavelengths)
    w_p, w_i, w_s = (float(wavelength_to_omega(w)) for w in wavelengths)
    assert spdc_mismatch(ktp, TYPE2_DEGENERATE, w_p, w_s, w_i, poling) == pytest.approx(0.0, abs=1e-9)


def test_grating_direction_follows_balance_sign(ktp):
    wavelengths = (775.0, 1550.0, 1550.0)
    type0 = (Axis.Z, Axis.Z, Axis.Z)
    assert momentum_balance(ktp, type0, Leg.SPDC, wavelengths) > 0
    assert solve_poling_period(ktp, type0, Leg.SPDC, wavelengths, strict_sign=True).direction == 1

    assert momentum_balance(ktp, TYPE2_DEGENERATE, Leg.SPDC, wavelengths) < 0
    with pytest.raises(NoPhaseMatch, match="negative"):
        solve_poling_period(ktp, TYPE2_DEGENERATE, Leg.SPDC, wavelengths, strict_sign=True)
