import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
import pandas as pd
from fastprogress.fastprogress import progress_bar
from scipy import optimize

from fcspdc_modeling.base.primitives import (
    Axis,
    Crystal,
    FrequencyRelations,
    Leg,
    PolingSpec,
)
from fcspdc_modeling.base.utilities import omega_to_wavelength
from fcspdc_modeling.dispersion import (
    CrystalDispersion,
    check_energy_conservation,
    load_crystal,
    solve_poling_period,
)
from fcspdc_modeling.errors import InvalidConfiguration, OutOfRange

_log = logging.getLogger(__name__)

# Below this |k_i' - k_p'| (fs/um) the JSA is treated as exactly vertical
DEGENERATE_SLOPE_EPS = 1e-6

GVM_CONDITIONS = ("vertical", "circular", "horizontal")


class SPDCAxes(NamedTuple):
    pump: Axis
    idler: Axis
    signal: Axis


class SFCAxes(NamedTuple):
    escort: Axis
    idler: Axis
    converted: Axis


# Pump and signal on the fast (y) axis, idler on the slow (z) axis
TYPE2_DEGENERATE = SPDCAxes(Axis.Y, Axis.Z, Axis.Y)


@dataclass(frozen=True)
class PhaseMatchConfig:
    """
    A pair of polarization assignments for the SPDC and SFC regions of a frequency-converted source.

    SPDC is written pump -> idler + signal and SFC escort + idler -> converted. The idler produced in the SPDC region
    is the photon converted in the SFC region, so both carry the same polarization. The converted photon leaves
    orthogonally polarized to the signal.
    """

    id: str
    spdc_axes: SPDCAxes
    sfc_axes: SFCAxes

    def __post_init__(self):
        object.__setattr__(self, "spdc_axes", SPDCAxes(*(Axis.parse(a) for a in self.spdc_axes)))
        object.__setattr__(self, "sfc_axes", SFCAxes(*(Axis.parse(a) for a in self.sfc_axes)))
        if self.spdc_axes.idler != self.sfc_axes.idler:
            raise InvalidConfiguration(
                f"Configuration {self.id}: the SPDC idler ({self.spdc_axes.idler.value}) and the SFC input idler "
                f"({self.sfc_axes.idler.value}) must share a polarization"
            )
        if self.sfc_axes.converted == self.spdc_axes.signal:
            raise InvalidConfiguration(
                f"Configuration {self.id}: the converted photon must be polarized orthogonally to the signal"
            )

    @property
    def number(self) -> int:
        return ROMAN_NUMERALS.index(self.id) + 1

    def axes_for(self, leg) -> Union[SPDCAxes, SFCAxes]:
        return self.spdc_axes if Leg.parse(leg) == Leg.SPDC else self.sfc_axes

    def describe(self) -> tuple[str, str]:
        p, i, s = (a.value for a in self.spdc_axes)
        e, i2, c = (a.value for a in self.sfc_axes)
        return f"{p} -> {i} + {s}", f"{e} + {i2} -> {c}"


ROMAN_NUMERALS = ("I", "II", "III", "IV", "V", "VI", "VII", "VIII")

_CATALOG = (
    PhaseMatchConfig("I", SPDCAxes("y", "y", "z"), SFCAxes("z", "y", "y")),
    PhaseMatchConfig("II", SPDCAxes("y", "z", "y"), SFCAxes("z", "z", "z")),
    PhaseMatchConfig("III", SPDCAxes("z", "z", "z"), SFCAxes("y", "z", "y")),
    PhaseMatchConfig("IV", SPDCAxes("z", "y", "y"), SFCAxes("y", "y", "z")),
    PhaseMatchConfig("V", SPDCAxes("x", "x", "z"), SFCAxes("z", "x", "x")),
    PhaseMatchConfig("VI", SPDCAxes("x", "z", "x"), SFCAxes("z", "z", "z")),
    PhaseMatchConfig("VII", SPDCAxes("z", "z", "z"), SFCAxes("x", "z", "x")),
    PhaseMatchConfig("VIII", SPDCAxes("z", "x", "x"), SFCAxes("x", "x", "z")),
)

# Uniaxial crystals have no independent x axis, leaving configurations I-IV
_N_ADMISSIBLE = {Crystal.KTP: 8, Crystal.LN: 4, Crystal.MGLN: 4}


def list_configs(crystal) -> list[PhaseMatchConfig]:
    """
    Phase-matching configurations admissible in a crystal: I-VIII for KTP, I-IV for LN and MgLN.
    """
    if isinstance(crystal, CrystalDispersion):
        crystal = crystal.crystal
    return list(_CATALOG[: _N_ADMISSIBLE[Crystal.parse(crystal)]])


def get_config(crystal, config_id: Union[str, int, PhaseMatchConfig]) -> PhaseMatchConfig:
    if isinstance(config_id, PhaseMatchConfig):
        config_id = config_id.id
    if isinstance(config_id, int) or str(config_id).isdigit():
        idx = int(config_id) - 1
        config_id = ROMAN_NUMERALS[idx] if 0 <= idx < len(ROMAN_NUMERALS) else str(config_id)
    config_id = str(config_id).strip().upper()
    for config in list_configs(crystal):
        if config.id == config_id:
            return config
    crystal_name = crystal.crystal.value if isinstance(crystal, CrystalDispersion) else str(crystal)
    raise InvalidConfiguration(f"Configuration '{config_id}' is not admissible for {crystal_name}")


def solve_config_poling(
    dispersion: CrystalDispersion,
    config: PhaseMatchConfig,
    leg,
    relations: FrequencyRelations,
    length_mm: float = 10.0,
    strict_sign: bool = False,
) -> PolingSpec:
    """Poling of one region of a configuration at the central wavelengths of ``relations``."""
    leg = Leg.parse(leg)
    wavelengths = relations.spdc_wavelengths() if leg == Leg.SPDC else relations.sfc_wavelengths()
    return solve_poling_period(
        dispersion, config.axes_for(leg), leg, wavelengths, length_mm=length_mm, strict_sign=strict_sign
    )


def spdc_mismatch(
    dispersion: CrystalDispersion,
    axes: Union[SPDCAxes, PhaseMatchConfig],
    omega_p,
    omega_s,
    omega_i,
    poling: PolingSpec,
):
    """
    SPDC phase mismatch Δk = k_p - k_s - k_i - direction * 2 pi m / Lambda in rad/um.

    Frequencies (rad/fs) broadcast against each other.
    """
    if isinstance(axes, PhaseMatchConfig):
        axes = axes.spdc_axes
    return (
        dispersion.wave_number_at_omega(axes.pump, omega_p)
        - dispersion.wave_number_at_omega(axes.signal, omega_s)
        - dispersion.wave_number_at_omega(axes.idler, omega_i)
        - poling.grating_wave_number
    )


def sfc_mismatch(
    dispersion: CrystalDispersion,
    axes: Union[SFCAxes, PhaseMatchConfig],
    omega_e,
    omega_i,
    omega_fc,
    poling: PolingSpec,
):
    """SFC phase mismatch Δk = k_FC - k_e - k_i - direction * 2 pi m / Lambda in rad/um."""
    if isinstance(axes, PhaseMatchConfig):
        axes = axes.sfc_axes
    return (
        dispersion.wave_number_at_omega(axes.converted, omega_fc)
        - dispersion.wave_number_at_omega(axes.escort, omega_e)
        - dispersion.wave_number_at_omega(axes.idler, omega_i)
        - poling.grating_wave_number
    )


def spdc_gradient(
    dispersion: CrystalDispersion, axes: SPDCAxes, omega_s: float, omega_i: float
) -> np.ndarray:
    """
    Gradient of the SPDC mismatch with respect to (omega_s, omega_i), with the pump at omega_s + omega_i.

    Returns (k_p' - k_s', k_p' - k_i') in fs/um.
    """
    kp = dispersion.inverse_group_velocity(axes.pump, omega_to_wavelength(omega_s + omega_i))
    ks = dispersion.inverse_group_velocity(axes.signal, omega_to_wavelength(omega_s))
    ki = dispersion.inverse_group_velocity(axes.idler, omega_to_wavelength(omega_i))
    return np.array([kp - ks, kp - ki])


def sfc_gradient(
    dispersion: CrystalDispersion, axes: SFCAxes, omega_i: float, omega_fc: float
) -> np.ndarray:
    """
    Gradient of the SFC mismatch with respect to (omega_i, omega_FC), with the escort at omega_FC - omega_i.

    Returns (k_e' - k_i', k_FC' - k_e') in fs/um.
    """
    ke = dispersion.inverse_group_velocity(axes.escort, omega_to_wavelength(omega_fc - omega_i))
    ki = dispersion.inverse_group_velocity(axes.idler, omega_to_wavelength(omega_i))
    kfc = dispersion.inverse_group_velocity(axes.converted, omega_to_wavelength(omega_fc))
    return np.array([ke - ki, kfc - ke])


def mismatch_gradient(
    dispersion: CrystalDispersion, config: PhaseMatchConfig, leg, relations: FrequencyRelations
) -> np.ndarray:
    """
    First-order expansion of one region's phase mismatch about the central frequencies, in the coordinates of that
    region's joint amplitude: (omega_s, omega_i) for SPDC and (omega_i, omega_FC) for SFC.
    """
    if Leg.parse(leg) == Leg.SPDC:
        return spdc_gradient(dispersion, config.spdc_axes, relations.omega_signal, relations.omega_idler)
    return sfc_gradient(dispersion, config.sfc_axes, relations.omega_idler, relations.omega_converted)


@dataclass(frozen=True)
class Orientation:
    """
    Orientation of the Δk = 0 ridge of an SPDC phase-matching function in the (omega_s, omega_i) plane.

    ``slope`` is d(Δomega_i)/d(Δomega_s) along the ridge, +-inf when the ridge is vertical.
    """

    slope: float
    vertical: bool

    @property
    def angle_deg(self) -> float:
        """Ridge angle from the signal axis in degrees, in (-90, 90]."""
        if self.vertical:
            return 90.0
        return float(np.degrees(np.arctan(self.slope)))


def jsa_orientation(
    dispersion: CrystalDispersion,
    axes: Union[SPDCAxes, PhaseMatchConfig],
    wavelengths: Sequence[float],
) -> Orientation:
    """
    Orientation of the joint spectral amplitude set by group-velocity mismatch.

    Parameters
    ----------
    dispersion: CrystalDispersion
        The crystal
    axes: SPDCAxes or PhaseMatchConfig
        SPDC polarizations
    wavelengths: sequence of float
        Central (pump, idler, signal) wavelengths in nm, which must conserve energy

    Returns
    -------
    Orientation
        Slope (k_p' - k_s') / (k_i' - k_p'), flagged vertical if |k_i' - k_p'| < 1e-6 fs/um
    """
    if isinstance(axes, PhaseMatchConfig):
        axes = axes.spdc_axes
    check_energy_conservation(Leg.SPDC, wavelengths)
    lam_p, lam_i, lam_s = wavelengths
    kp = dispersion.inverse_group_velocity(axes.pump, lam_p)
    ki = dispersion.inverse_group_velocity(axes.idler, lam_i)
    ks = dispersion.inverse_group_velocity(axes.signal, lam_s)

    numerator = kp - ks
    denominator = ki - kp
    if abs(denominator) < DEGENERATE_SLOPE_EPS:
        sign = 1.0 if numerator >= 0 else -1.0
        return Orientation(slope=sign * np.inf, vertical=True)
    return Orientation(slope=float(numerator / denominator), vertical=False)


@dataclass(frozen=True)
class GVMLocus:
    """
    Points (lambda_s, lambda_i) in nm solving one group-velocity-matching condition.

    ``degeneracy_nm`` lists the crossings of the locus with the diagonal lambda_s = lambda_i.
    """

    condition: str
    lambda_s_nm: np.ndarray
    lambda_i_nm: np.ndarray
    degeneracy_nm: tuple[float, ...] = ()

    @property
    def lambda_p_nm(self) -> np.ndarray:
        return 1.0 / (1.0 / self.lambda_s_nm + 1.0 / self.lambda_i_nm)

    @property
    def is_empty(self) -> bool:
        return len(self.lambda_s_nm) == 0


def _gvm_residuals(kp, ks, ki) -> dict[str, np.ndarray]:
    return {
        "vertical": kp - ki,
        "circular": kp - 0.5 * (ki + ks),
        "horizontal": kp - ks,
    }


def _gvm_residual_at(dispersion, axes, condition, lam_s, lam_i) -> float:
    lam_p = 1.0 / (1.0 / lam_s + 1.0 / lam_i)
    kp = dispersion.inverse_group_velocity(axes.pump, lam_p)
    ks = dispersion.inverse_group_velocity(axes.signal, lam_s)
    ki = dispersion.inverse_group_velocity(axes.idler, lam_i)
    return float(_gvm_residuals(kp, ks, ki)[condition])


def _sign_changes(values: np.ndarray) -> np.ndarray:
    finite = np.isfinite(values[:-1]) & np.isfinite(values[1:])
    return np.flatnonzero(finite & (np.sign(values[:-1]) * np.sign(values[1:]) <= 0) & (values[:-1] != values[1:]))


def trace_gvm_curves(
    dispersion: CrystalDispersion,
    axes: SPDCAxes = TYPE2_DEGENERATE,
    lambda_range_nm: tuple[float, float] = (700.0, 3000.0),
    step_nm: float = 1.0,
    xtol_nm: float = 1e-4,
    progressbar: bool = False,
) -> dict[str, GVMLocus]:
    """
    Trace the three group-velocity-matching loci of type-2 SPDC in the (lambda_s, lambda_i) plane.

    Each condition (vertical k_p' = k_i', circular k_p' = (k_i' + k_s') / 2 and horizontal k_p' = k_s') is scanned on
    a square grid with ``step_nm`` spacing. Every sign change along lambda_i is refined by bisection to ``xtol_nm``.
    Crossings with the degeneracy diagonal are found the same way along lambda_s = lambda_i.

    Parameters
    ----------
    dispersion: CrystalDispersion
        The crystal
    axes: SPDCAxes
        Pump, idler, signal polarizations. Defaults to pump and signal on the fast axis, idler on the slow one.
    lambda_range_nm: tuple of float
        Range of both the signal and idler wavelengths
    step_nm: float, default 1
        Scan step
    xtol_nm: float, default 1e-4
        Bisection tolerance
    progressbar: bool, default False
        Show a progress bar over the scan rows

    Returns
    -------
    loci: dict
        Condition name -> GVMLocus. Loci without roots in the range are empty.
    """
    low, high = (float(x) for x in lambda_range_nm)
    if not low < high or step_nm <= 0:
        raise OutOfRange(f"Invalid wavelength range {lambda_range_nm} with step {step_nm}")
    valid_low, valid_high = dispersion.valid_range_nm
    if low < valid_low or high > valid_high:
        raise OutOfRange(
            f"Requested range [{low:g}, {high:g}] nm is outside the {dispersion.crystal.value} Sellmeier window "
            f"[{valid_low:g}, {valid_high:g}] nm"
        )

    scan = np.arange(low, high + 0.5 * step_nm, step_nm)
    scan = scan[scan <= high]
    ks = dispersion.inverse_group_velocity(axes.signal, scan)
    ki = dispersion.inverse_group_velocity(axes.idler, scan)

    points = {c: ([], []) for c in GVM_CONDITIONS}
    rows = progress_bar(range(len(scan)), display=progressbar) if progressbar else range(len(scan))

    for row in rows:
        lam_s = scan[row]
        lam_p = 1.0 / (1.0 / lam_s + 1.0 / scan)
        inside = lam_p > valid_low * (1.0 + 1e-3)
        kp = np.full(scan.shape, np.nan)
        if inside.any():
            kp[inside] = dispersion.inverse_group_velocity(axes.pump, lam_p[inside])

        for condition, residual in _gvm_residuals(kp, ks[row], ki).items():
            for j in _sign_changes(residual):
                root = optimize.bisect(
                    lambda lam_i: _gvm_residual_at(dispersion, axes, condition, lam_s, lam_i),
                    scan[j],
                    scan[j + 1],
                    xtol=xtol_nm,
                )
                points[condition][0].append(lam_s)
                points[condition][1].append(root)

    lam_p_diag = scan / 2.0
    diag_ok = lam_p_diag > valid_low * (1.0 + 1e-3)
    kp_diag = np.full(scan.shape, np.nan)
    if diag_ok.any():
        kp_diag[diag_ok] = dispersion.inverse_group_velocity(axes.pump, lam_p_diag[diag_ok])

    loci = {}
    for condition, residual in _gvm_residuals(kp_diag, ks, ki).items():
        crossings = tuple(
            optimize.bisect(
                lambda lam: _gvm_residual_at(dispersion, axes, condition, lam, lam),
                scan[j],
                scan[j + 1],
                xtol=xtol_nm,
            )
            for j in _sign_changes(residual)
        )
        lam_s, lam_i = points[condition]
        loci[condition] = GVMLocus(condition, np.array(lam_s), np.array(lam_i), crossings)
        _log.info(
            "%s GVM locus: %d points, degeneracy crossings %s",
            condition,
            len(lam_s),
            [round(c, 1) for c in crossings],
        )

    return loci


def gvm_frame(loci: dict[str, GVMLocus]) -> pd.DataFrame:
    """
    Flatten GVM loci into a table with columns condition, lambda_s_nm, lambda_i_nm, lambda_p_nm, degenerate.

    Degeneracy crossings are included as rows with ``degenerate`` set.
    """
    frames = []
    for condition in GVM_CONDITIONS:
        locus = loci.get(condition)
        if locus is None:
            continue
        body = pd.DataFrame(
            {
                "condition": condition,
                "lambda_s_nm": locus.lambda_s_nm,
                "lambda_i_nm": locus.lambda_i_nm,
                "lambda_p_nm": locus.lambda_p_nm,
                "degenerate": False,
            }
        )
        crossings = np.array(locus.degeneracy_nm, dtype=float)
        diag = pd.DataFrame(
            {
                "condition": condition,
                "lambda_s_nm": crossings,
                "lambda_i_nm": crossings,
                "lambda_p_nm": crossings / 2.0,
                "degenerate": True,
            }
        )
        frames.extend(f for f in (body, diag) if len(f))
    columns = ["condition", "lambda_s_nm", "lambda_i_nm", "lambda_p_nm", "degenerate"]
    if not frames:
        return pd.DataFrame(columns=columns)
    return pd.concat(frames, ignore_index=True)[columns]


def read_gvm_csv(path) -> dict[str, GVMLocus]:
    """Parse a CSV written from :func:`gvm_frame` back into GVM loci."""
    df = pd.read_csv(path)
    loci = {}
    for condition in GVM_CONDITIONS:
        sub = df[df["condition"] == condition]
        body = sub[~sub["degenerate"].astype(bool)]
        diag = sub[sub["degenerate"].astype(bool)]
        loci[condition] = GVMLocus(
            condition,
            body["lambda_s_nm"].to_numpy(dtype=float),
            body["lambda_i_nm"].to_numpy(dtype=float),
            tuple(diag["lambda_s_nm"].to_numpy(dtype=float)),
        )
    return loci


def type2_axes(fast: Union[Axis, str] = Axis.Y, slow: Union[Axis, str] = Axis.Z) -> SPDCAxes:
    """Type-2 SPDC axes with pump and signal on the fast axis and the idler on the slow axis."""
    fast, slow = Axis.parse(fast), Axis.parse(slow)
    if fast == slow:
        raise InvalidConfiguration("The fast and slow axes of a type-2 process must differ")
    return SPDCAxes(pump=fast, idler=slow, signal=fast)


def default_dispersion(crystal) -> CrystalDispersion:
    if isinstance(crystal, CrystalDispersion):
        return crystal
    return load_crystal(crystal)
