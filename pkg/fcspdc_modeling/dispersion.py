import logging
import tomllib
import warnings
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np

from fcspdc_modeling.base.primitives import MAX_REGION_LENGTH_MM, Axis, Crystal, Leg, PolingSpec
from fcspdc_modeling.base.utilities import (
    C_UM_PER_FS,
    _validate_interval,
    omega_to_wavelength,
    wavelength_to_omega,
)
from fcspdc_modeling.errors import (
    EnergyMismatch,
    InvalidConfiguration,
    NoPhaseMatch,
    OutOfRange,
    SellmeierExtrapolationWarning,
    UnknownAxis,
)
from fcspdc_modeling.tools.sympy_tools import (
    N_COEFFICIENTS,
    compile_refractive_index,
    compile_thermo_optic_shift,
)

_log = logging.getLogger(__name__)

DEFAULT_DATA_FILE = Path(__file__).parent / "data" / "sellmeier.toml"

# Uniaxial crystals store ordinary/extraordinary sets; y is ordinary and z extraordinary
UNIAXIAL_AXIS_NAMES = {"ordinary": Axis.Y, "extraordinary": Axis.Z}

# Finite-difference settings for k'(omega)
FD_INITIAL_RELATIVE_STEP = 4e-3
FD_MAX_HALVINGS = 8
FD_TOLERANCE = 1e-10
FD_MIN_RELATIVE_ROOM = 1e-6

ENERGY_TOLERANCE = 1e-9

ArrayLike = Union[float, Sequence[float], np.ndarray]


def _as_output(x: np.ndarray, like) -> Union[float, np.ndarray]:
    return float(x) if np.ndim(like) == 0 else x


@dataclass(frozen=True)
class SellmeierSet:
    """
    One published Sellmeier fit for a single crystal axis.

    Parameters
    ----------
    form: str
        "kato" or "zelmon", see :func:`fcspdc_modeling.tools.sympy_tools.sellmeier_n_squared`
    coefficients: tuple of float
        Fit coefficients, wavelengths in micrometers
    fit_range_nm: tuple of float
        Wavelength range covered by the published fit. Evaluation outside it warns.
    valid_range_nm: tuple of float
        Hard evaluation window. Evaluation outside it raises OutOfRange.
    cutoff_nm: float
        Short-wavelength absorption edge of the crystal
    source_citation: str
        Literature reference of the coefficients
    """

    form: str
    coefficients: tuple[float, ...]
    fit_range_nm: tuple[float, float]
    valid_range_nm: tuple[float, float]
    cutoff_nm: float
    source_citation: str = ""
    _index: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.form not in N_COEFFICIENTS:
            raise InvalidConfiguration(f"Unknown Sellmeier form '{self.form}'")
        object.__setattr__(self, "coefficients", tuple(float(x) for x in self.coefficients))
        object.__setattr__(self, "fit_range_nm", _validate_interval("fit_range_nm", self.fit_range_nm))
        object.__setattr__(
            self, "valid_range_nm", _validate_interval("valid_range_nm", self.valid_range_nm)
        )
        object.__setattr__(self, "_index", compile_refractive_index(self.form, self.coefficients))

    def index(self, wavelength_um):
        """Refractive index at wavelengths in micrometers, without any range checks."""
        return np.asarray(self._index(np.asarray(wavelength_um, dtype=float)), dtype=float)

    def to_dict(self):
        return {
            "form": self.form,
            "coefficients": list(self.coefficients),
            "fit_range_nm": list(self.fit_range_nm),
            "valid_range_nm": list(self.valid_range_nm),
            "cutoff_nm": self.cutoff_nm,
            "source_citation": self.source_citation,
        }


@dataclass(frozen=True, eq=False)
class CrystalDispersion:
    """
    Refractive indices, wave numbers and inverse group velocities of one nonlinear crystal.

    All methods accept scalar or array wavelengths in nm and are pure functions of their arguments. Instances are
    immutable and can be shared between threads.

    Parameters
    ----------
    crystal: Crystal
        Crystal identity
    axes: mapping of Axis to SellmeierSet
        One coefficient set per independent axis. Uniaxial crystals only define y (ordinary) and z (extraordinary).
    thermo_optic: mapping of Axis to callable, optional
        Thermo-optic shift functions f(lam_um, delta_T). Axes without an entry are temperature independent.
    temperature_c: float, default 20
        Crystal temperature in degrees C
    reference_temperature_c: float, default 20
        Temperature at which the Sellmeier fits apply
    strict_axes: bool, default False
        If True, asking a uniaxial crystal for its x axis raises UnknownAxis instead of returning the ordinary index.
    data_version: str
        Version string of the coefficient file the sets were read from
    """

    crystal: Crystal
    axes: Mapping[Axis, SellmeierSet]
    thermo_optic: Mapping[Axis, Callable] = field(default_factory=dict)
    temperature_c: float = 20.0
    reference_temperature_c: float = 20.0
    strict_axes: bool = False
    data_version: str = ""

    def __post_init__(self):
        object.__setattr__(self, "crystal", Crystal.parse(self.crystal))
        if Axis.Y not in self.axes or Axis.Z not in self.axes:
            raise InvalidConfiguration(f"{self.crystal.value} needs coefficient sets for at least y and z")

    @property
    def valid_range_nm(self) -> tuple[float, float]:
        lows, highs = zip(*(s.valid_range_nm for s in self.axes.values()))
        return max(lows), min(highs)

    @property
    def cutoff_nm(self) -> float:
        return max(s.cutoff_nm for s in self.axes.values())

    @property
    def fc_lower_limit_nm(self) -> float:
        """Shortest degeneracy wavelength whose pump, at 3/4 of it, still lies above the absorption edge."""
        return 4.0 * self.cutoff_nm / 3.0

    @property
    def is_uniaxial(self) -> bool:
        return Axis.X not in self.axes

    def with_temperature(self, temperature_c: float) -> "CrystalDispersion":
        return replace(self, temperature_c=float(temperature_c))

    def resolve_axis(self, axis) -> Axis:
        axis = Axis.parse(axis)
        if axis in self.axes:
            return axis
        if self.strict_axes:
            raise UnknownAxis(
                f"{self.crystal.value} is uniaxial and has no independent x axis (strict axis mode is enabled)"
            )
        return Axis.Y

    def _check_range(self, axis: Axis, wavelength_nm: np.ndarray) -> None:
        sellmeier = self.axes[axis]
        low, high = sellmeier.valid_range_nm
        if not np.all(np.isfinite(wavelength_nm)):
            raise OutOfRange(f"Wavelengths must be finite, found {wavelength_nm}")
        if np.any(wavelength_nm < low) or np.any(wavelength_nm > high):
            bad = wavelength_nm[(wavelength_nm < low) | (wavelength_nm > high)]
            raise OutOfRange(
                f"Wavelength {bad.min() if bad.min() < low else bad.max():.6g} nm is outside the "
                f"{self.crystal.value} {axis.value}-axis Sellmeier window [{low:g}, {high:g}] nm"
            )
        fit_low, fit_high = sellmeier.fit_range_nm
        if np.any(wavelength_nm < fit_low) or np.any(wavelength_nm > fit_high):
            warnings.warn(
                f"Evaluating the {self.crystal.value} {axis.value}-axis Sellmeier equation outside its fitted "
                f"range [{fit_low:g}, {fit_high:g}] nm",
                SellmeierExtrapolationWarning,
                stacklevel=3,
            )

    def _index(self, axis: Axis, wavelength_um: np.ndarray) -> np.ndarray:
        n = self.axes[axis].index(wavelength_um)
        delta_t = self.temperature_c - self.reference_temperature_c
        if delta_t != 0.0 and axis in self.thermo_optic:
            n = n + self.thermo_optic[axis](wavelength_um, delta_t)
        return n

    def refractive_index(self, axis, wavelength_nm: ArrayLike):
        """
        Refractive index along ``axis`` at vacuum wavelength ``wavelength_nm``.

        Parameters
        ----------
        axis: Axis or str
            Crystal axis, "x", "y" or "z"
        wavelength_nm: float or array
            Vacuum wavelength(s) in nm

        Returns
        -------
        n: float or array
            Refractive index, same shape as the input
        """
        axis = self.resolve_axis(axis)
        lam = np.asarray(wavelength_nm, dtype=float)
        self._check_range(axis, np.atleast_1d(lam))
        return _as_output(self._index(axis, lam * 1e-3), wavelength_nm)

    def wave_number(self, axis, wavelength_nm: ArrayLike):
        """Wave number k = 2 pi n / lambda in rad/um."""
        axis = self.resolve_axis(axis)
        lam = np.asarray(wavelength_nm, dtype=float)
        self._check_range(axis, np.atleast_1d(lam))
        lam_um = lam * 1e-3
        return _as_output(2.0 * np.pi * self._index(axis, lam_um) / lam_um, wavelength_nm)

    def wave_number_at_omega(self, axis, omega: ArrayLike):
        """Wave number in rad/um at angular frequencies in rad/fs."""
        return self.wave_number(axis, omega_to_wavelength(omega))

    def _k_of_omega(self, axis: Axis, omega: np.ndarray) -> np.ndarray:
        lam_um = 2.0 * np.pi * C_UM_PER_FS / omega
        return self._index(axis, lam_um) * omega / C_UM_PER_FS

    def _central_difference(self, axis: Axis, omega: np.ndarray, h: np.ndarray) -> np.ndarray:
        return (self._k_of_omega(axis, omega + h) - self._k_of_omega(axis, omega - h)) / (2.0 * h)

    def inverse_group_velocity(self, axis, wavelength_nm: ArrayLike):
        """
        Inverse group velocity k' = dk/domega in fs/um.

        The derivative is taken numerically in omega with a Richardson-extrapolated central difference whose step is
        halved until successive estimates agree to a relative 1e-10. The stencil is kept inside the Sellmeier window,
        so wavelengths too close to its edges raise OutOfRange.

        Parameters
        ----------
        axis: Axis or str
            Crystal axis
        wavelength_nm: float or array
            Vacuum wavelength(s) in nm

        Returns
        -------
        k_prime: float or array
            Inverse group velocity, same shape as the input
        """
        axis = self.resolve_axis(axis)
        lam = np.atleast_1d(np.asarray(wavelength_nm, dtype=float))
        self._check_range(axis, lam)

        low, high = self.axes[axis].valid_range_nm
        omega = wavelength_to_omega(lam)
        room = np.minimum(omega - wavelength_to_omega(high), wavelength_to_omega(low) - omega)
        if np.any(room < omega * FD_MIN_RELATIVE_ROOM):
            raise OutOfRange(
                f"Wavelength too close to the {self.crystal.value} Sellmeier window edges [{low:g}, {high:g}] nm "
                f"for a finite-difference derivative"
            )

        h = np.minimum(omega * FD_INITIAL_RELATIVE_STEP, 0.999 * room)
        d_prev = self._central_difference(axis, omega, h)
        r_prev = None
        result = np.empty_like(omega)
        done = np.zeros(omega.shape, dtype=bool)

        for _ in range(FD_MAX_HALVINGS):
            h = h / 2.0
            d = self._central_difference(axis, omega, h)
            r = (4.0 * d - d_prev) / 3.0
            if r_prev is not None:
                converged = ~done & (np.abs(r - r_prev) <= FD_TOLERANCE * np.abs(r))
                result[converged] = r[converged]
                done |= converged
                if done.all():
                    break
            r_prev, d_prev = r, d

        result[~done] = r[~done]
        return _as_output(result.reshape(np.shape(wavelength_nm)), wavelength_nm)

    def to_dict(self):
        return {
            "crystal": self.crystal.value,
            "temperature_c": self.temperature_c,
            "data_version": self.data_version,
            "axes": {axis.value: s.to_dict() for axis, s in self.axes.items()},
        }


def _parse_axis_name(crystal: Crystal, name: str) -> Axis:
    name = str(name).strip().lower()
    if name in UNIAXIAL_AXIS_NAMES:
        return UNIAXIAL_AXIS_NAMES[name]
    return Axis.parse(name)


def _read_data_file(path: Path) -> dict:
    if not path.exists():
        _log.warning("Sellmeier data file %s not found, using the packaged coefficients", path)
        path = DEFAULT_DATA_FILE
    with open(path, "rb") as f:
        return tomllib.load(f)


@lru_cache(maxsize=32)
def _load_crystal_cached(
    crystal: Crystal, data_file: str, strict_axes: bool, temperature_c: Optional[float]
) -> CrystalDispersion:
    data = _read_data_file(Path(data_file))
    reference_t = float(data.get("reference_temperature_c", 20.0))
    version = str(data.get("version", ""))

    axes = {}
    for entry in data.get("sellmeier", []):
        if Crystal.parse(entry["crystal"]) != crystal:
            continue
        missing = {"axis", "form", "coefficients", "valid_range_nm", "cutoff_nm"} - set(entry)
        if missing:
            raise InvalidConfiguration(f"Sellmeier entry for {crystal.value} is missing fields {sorted(missing)}")
        axis = _parse_axis_name(crystal, entry["axis"])
        axes[axis] = SellmeierSet(
            form=entry["form"],
            coefficients=tuple(entry["coefficients"]),
            fit_range_nm=tuple(entry.get("fit_range_nm", entry["valid_range_nm"])),
            valid_range_nm=tuple(entry["valid_range_nm"]),
            cutoff_nm=float(entry["cutoff_nm"]),
            source_citation=entry.get("source_citation", ""),
        )

    if not axes:
        raise InvalidConfiguration(f"No Sellmeier coefficients for {crystal.value} in {data_file}")

    thermo = {}
    for entry in data.get("thermo_optic", []):
        if Crystal.parse(entry["crystal"]) != crystal:
            continue
        thermo[_parse_axis_name(crystal, entry["axis"])] = compile_thermo_optic_shift(entry["n1"], entry["n2"])

    _log.debug("Loaded %s Sellmeier sets for axes %s", crystal.value, [a.value for a in axes])
    return CrystalDispersion(
        crystal=crystal,
        axes=axes,
        thermo_optic=thermo,
        temperature_c=reference_t if temperature_c is None else float(temperature_c),
        reference_temperature_c=reference_t,
        strict_axes=strict_axes,
        data_version=version,
    )


def load_crystal(
    crystal: Union[Crystal, str],
    data_file: Optional[Union[str, Path]] = None,
    strict_axes: bool = False,
    temperature_c: Optional[float] = None,
) -> CrystalDispersion:
    """
    Read the dispersion of a crystal from a Sellmeier coefficient file.

    Parameters
    ----------
    crystal: Crystal or str
        "ktp", "ln" or "mgln"
    data_file: path, optional
        TOML coefficient file. Defaults to the file shipped with the package, which is also used when the given file
        does not exist.
    strict_axes: bool, default False
        Refuse the x axis of uniaxial crystals instead of mapping it to the ordinary axis
    temperature_c: float, optional
        Crystal temperature. Defaults to the reference temperature of the file (20 C).

    Returns
    -------
    CrystalDispersion
        Cached, immutable dispersion object
    """
    path = DEFAULT_DATA_FILE if data_file is None else Path(data_file)
    return _load_crystal_cached(Crystal.parse(crystal), str(path), bool(strict_axes), temperature_c)


def _as_dispersion(crystal) -> CrystalDispersion:
    if isinstance(crystal, CrystalDispersion):
        return crystal
    return load_crystal(crystal)


def refractive_index(crystal, axis, wavelength_nm: ArrayLike):
    return _as_dispersion(crystal).refractive_index(axis, wavelength_nm)


def wave_number(crystal, axis, wavelength_nm: ArrayLike):
    return _as_dispersion(crystal).wave_number(axis, wavelength_nm)


def inverse_group_velocity(crystal, axis, wavelength_nm: ArrayLike):
    return _as_dispersion(crystal).inverse_group_velocity(axis, wavelength_nm)


def check_energy_conservation(leg, wavelengths: Sequence[float]) -> None:
    """
    Raise EnergyMismatch unless the wavelength triple conserves energy to a relative 1e-9.

    The triple is ordered as the process is written: (pump, idler, signal) for SPDC, where the pump splits into the
    other two, and (escort, idler, converted) for SFC, where the first two combine into the third.
    """
    leg = Leg.parse(leg)
    if len(wavelengths) != 3 or any(not np.isfinite(w) or w <= 0 for w in wavelengths):
        raise EnergyMismatch(f"Expected three positive wavelengths, found {wavelengths}")
    w0, w1, w2 = (float(wavelength_to_omega(w)) for w in wavelengths)
    high, low_sum = (w0, w1 + w2) if leg == Leg.SPDC else (w2, w0 + w1)
    if abs(high - low_sum) > ENERGY_TOLERANCE * high:
        raise EnergyMismatch(
            f"{leg.value.upper()} wavelengths {tuple(wavelengths)} nm violate energy conservation "
            f"(relative error {abs(high - low_sum) / high:.3g})"
        )


def momentum_balance(crystal, axes: Sequence, leg, wavelengths: Sequence[float]):
    """
    Uncompensated k-balance of a three-wave process in rad/um, before the grating term.

    SPDC: k_pump - k_idler - k_signal. SFC: k_converted - k_escort - k_idler. Axes and wavelengths are ordered as
    in :func:`check_energy_conservation`.
    """
    dispersion = _as_dispersion(crystal)
    leg = Leg.parse(leg)
    k0, k1, k2 = (dispersion.wave_number(axis, lam) for axis, lam in zip(axes, wavelengths))
    if leg == Leg.SPDC:
        return k0 - k1 - k2
    return k2 - k0 - k1


def solve_poling_period(
    crystal,
    axes: Sequence,
    leg,
    wavelengths: Sequence[float],
    length_mm: float = 10.0,
    strict_sign: bool = False,
) -> PolingSpec:
    """
    First-order poling period that phase matches a three-wave process at the given wavelengths.

    Parameters
    ----------
    crystal: CrystalDispersion, Crystal or str
        The crystal
    axes: sequence of three Axis
        Polarization axes, (pump, idler, signal) for SPDC or (escort, idler, converted) for SFC
    leg: Leg or str
        "spdc" or "sfc"
    wavelengths: sequence of three float
        Wavelengths in nm, ordered like ``axes``
    length_mm: float, default 10
        Length of the poled region recorded in the returned spec
    strict_sign: bool, default False
        If True, a negative k-balance (which would need a negative period with the grating written as
        -2 pi m / Lambda) raises NoPhaseMatch. Otherwise the grating direction absorbs the sign.

    Returns
    -------
    PolingSpec
        Positive period and grating direction such that the phase mismatch vanishes at the given wavelengths
    """
    check_energy_conservation(leg, wavelengths)
    balance = float(momentum_balance(crystal, axes, leg, wavelengths))

    min_balance = 2.0 * np.pi / (MAX_REGION_LENGTH_MM * 1e3)
    if abs(balance) < min_balance:
        raise NoPhaseMatch(
            f"Residual k-balance {balance:.3g} rad/um needs a poling period longer than the "
            f"{MAX_REGION_LENGTH_MM:g} mm region"
        )
    if strict_sign and balance < 0:
        raise NoPhaseMatch(
            f"Residual k-balance {balance:.6g} rad/um is negative, so the first-order period would be negative"
        )

    direction = 1 if balance > 0 else -1
    return PolingSpec(
        period_um=2.0 * np.pi / abs(balance), order=1, direction=direction, length_mm=length_mm
    )
