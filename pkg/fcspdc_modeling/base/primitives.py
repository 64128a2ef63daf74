from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional

import numpy as np

from fcspdc_modeling.base.utilities import (
    _validate_interval,
    omega_to_wavelength,
    wavelength_to_omega,
)
from fcspdc_modeling.errors import InvalidConfiguration, UnknownAxis

# Longest poled region a crystal may have, in mm
MIN_REGION_LENGTH_MM = 1.0
MAX_REGION_LENGTH_MM = 30.0


class _ParsableEnum(str, Enum):
    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            valid = ", ".join(member.value for member in cls)
            raise InvalidConfiguration(
                f"Unknown {cls.__name__} '{value}'. Valid choices are: {valid}"
            ) from None


class Crystal(_ParsableEnum):
    KTP = "ktp"
    LN = "ln"
    MGLN = "mgln"


class Axis(_ParsableEnum):
    X = "x"
    Y = "y"
    Z = "z"

    @classmethod
    def parse(cls, value):
        try:
            return super().parse(value)
        except InvalidConfiguration:
            raise UnknownAxis(f"Unknown crystal axis '{value}', expected one of x, y, z") from None


class Leg(_ParsableEnum):
    SPDC = "spdc"
    SFC = "sfc"


class PMFKind(_ParsableEnum):
    SINC = "sinc"
    GAUSSIAN = "gaussian"


class AmplitudeKind(_ParsableEnum):
    JSA = "jsa"
    JCA = "jca"
    EFFECTIVE = "effective"
    ENVELOPE = "envelope"
    PMF = "pmf"


@dataclass(frozen=True)
class PolingSpec:
    """
    First-order periodic poling of one crystal region.

    Parameters
    ----------
    period_um: float
        Poling period in micrometers, always positive.
    order: int
        Quasi-phase-matching order. Only first order is supported.
    direction: int
        +1 or -1. The grating contributes ``direction * 2 pi order / period`` to the momentum balance, so that the
        sign of the uncompensated k-balance can be cancelled with a positive period.
    length_mm: float
        Length of the poled region in mm, between 1 and 30 mm.
    """

    period_um: float
    order: int = 1
    direction: int = 1
    length_mm: float = 10.0

    def __post_init__(self):
        if not np.isfinite(self.period_um) or self.period_um <= 0:
            raise ValueError(f"Poling period must be positive, found {self.period_um}")
        if self.order != 1:
            raise ValueError(f"Only first-order quasi-phase-matching is supported, found m = {self.order}")
        if self.direction not in (-1, 1):
            raise ValueError(f"Grating direction must be +1 or -1, found {self.direction}")
        if not MIN_REGION_LENGTH_MM <= self.length_mm <= MAX_REGION_LENGTH_MM:
            raise ValueError(
                f"Region length must lie in [{MIN_REGION_LENGTH_MM}, {MAX_REGION_LENGTH_MM}] mm, "
                f"found {self.length_mm}"
            )

    @property
    def grating_wave_number(self) -> float:
        """Signed grating momentum 2 pi m / Lambda in rad/um."""
        return self.direction * 2.0 * np.pi * self.order / self.period_um

    def with_length(self, length_mm: float) -> "PolingSpec":
        return PolingSpec(self.period_um, self.order, self.direction, float(length_mm))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class FrequencyRelations:
    """
    Wavelengths of the five fields of a frequency-converted pair source with degeneracy wavelength lambda_deg.

    The pump is at 3/4 lambda_deg, the escort at 3/2 lambda_deg and the idler at 3 lambda_deg. The signal and the
    frequency-converted idler both leave at lambda_deg.

    Examples
    --------
    .. code-block:: python

        rel = FrequencyRelations(780.0)
        rel.pump_nm  # 585.0
        rel.omega_pump / rel.omega_escort  # 2.0
    """

    lambda_deg_nm: float

    def __post_init__(self):
        if not np.isfinite(self.lambda_deg_nm) or self.lambda_deg_nm <= 0:
            raise ValueError(f"Degeneracy wavelength must be positive, found {self.lambda_deg_nm}")

    @classmethod
    def from_pump(cls, pump_nm: float) -> "FrequencyRelations":
        return cls(4.0 * pump_nm / 3.0)

    @property
    def pump_nm(self) -> float:
        return 3.0 * self.lambda_deg_nm / 4.0

    @property
    def escort_nm(self) -> float:
        return 3.0 * self.lambda_deg_nm / 2.0

    @property
    def idler_nm(self) -> float:
        return 3.0 * self.lambda_deg_nm

    @property
    def signal_nm(self) -> float:
        return self.lambda_deg_nm

    @property
    def converted_nm(self) -> float:
        return self.lambda_deg_nm

    @property
    def omega_pump(self) -> float:
        return float(wavelength_to_omega(self.pump_nm))

    @property
    def omega_escort(self) -> float:
        return float(wavelength_to_omega(self.escort_nm))

    @property
    def omega_idler(self) -> float:
        return float(wavelength_to_omega(self.idler_nm))

    @property
    def omega_signal(self) -> float:
        return float(wavelength_to_omega(self.signal_nm))

    @property
    def omega_converted(self) -> float:
        return float(wavelength_to_omega(self.converted_nm))

    def spdc_wavelengths(self) -> tuple[float, float, float]:
        """(pump, idler, signal) in nm."""
        return self.pump_nm, self.idler_nm, self.signal_nm

    def sfc_wavelengths(self) -> tuple[float, float, float]:
        """(escort, idler, converted) in nm."""
        return self.escort_nm, self.idler_nm, self.converted_nm


@dataclass(frozen=True)
class BandwidthSet:
    """
    The four Gaussian bandwidths of a frequency-converted source, in rad/fs.

    ``sigma_p`` and ``sigma_e`` are the amplitude standard deviations of the pump and escort envelopes. ``sigma_phi``
    and ``sigma_psi`` are the amplitude standard deviations of the SPDC and SFC phase-matching functions measured
    along the normal of their Δk = 0 ridge. ``output_bandwidth`` is the width of the output state used to normalize
    the four (see :attr:`normalized`).
    """

    sigma_p: float
    sigma_phi: float
    sigma_e: float
    sigma_psi: float
    output_bandwidth: Optional[float] = None

    def __post_init__(self):
        for name in ("sigma_p", "sigma_phi", "sigma_e", "sigma_psi"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, found {value}")
        if self.output_bandwidth is not None and not self.output_bandwidth > 0:
            raise ValueError(f"output_bandwidth must be positive, found {self.output_bandwidth}")

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma_p, self.sigma_phi, self.sigma_e, self.sigma_psi])

    @classmethod
    def from_array(cls, values, output_bandwidth=None) -> "BandwidthSet":
        sigma_p, sigma_phi, sigma_e, sigma_psi = (float(x) for x in values)
        return cls(sigma_p, sigma_phi, sigma_e, sigma_psi, output_bandwidth)

    def scaled(self, factor: float) -> "BandwidthSet":
        out = None if self.output_bandwidth is None else self.output_bandwidth * factor
        return BandwidthSet.from_array(self.as_array() * factor, out)

    @property
    def normalized(self) -> dict[str, float]:
        if self.output_bandwidth is None:
            raise ValueError("Normalized bandwidths require an output bandwidth")
        return {
            name: value / self.output_bandwidth
            for name, value in zip(("sigma_p", "sigma_phi", "sigma_e", "sigma_psi"), self.as_array())
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.output_bandwidth is not None:
            d.update({f"{k}_norm": v for k, v in self.normalized.items()})
        return d


@dataclass(frozen=True)
class TophatFilter:
    """
    Rectangular pass band on both axes of a joint amplitude. Bands are (low, high) wavelengths in nm.
    """

    band1_nm: tuple[float, float]
    band2_nm: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "band1_nm", _validate_interval("band1_nm", self.band1_nm))
        object.__setattr__(self, "band2_nm", _validate_interval("band2_nm", self.band2_nm))

    @classmethod
    def from_frequencies(cls, center1, half_width1, center2, half_width2) -> "TophatFilter":
        """Build a filter from angular-frequency band centers and half-widths in rad/fs."""
        return cls(band_from_frequencies(center1, half_width1), band_from_frequencies(center2, half_width2))

    @property
    def is_zero_width(self) -> bool:
        return self.band1_nm[0] == self.band1_nm[1] or self.band2_nm[0] == self.band2_nm[1]

    def to_dict(self):
        return {"band1_nm": list(self.band1_nm), "band2_nm": list(self.band2_nm)}


def band_from_frequencies(center: float, half_width: float) -> tuple[float, float]:
    """
    Convert an angular-frequency band [center - half_width, center + half_width] to a wavelength band in nm.
    """
    if half_width < 0:
        raise ValueError(f"half_width must be non-negative, found {half_width}")
    if half_width >= center:
        raise ValueError(f"Band half-width {half_width} reaches zero frequency (center {center})")
    low = float(omega_to_wavelength(center + half_width))
    high = float(omega_to_wavelength(center - half_width))
    return low, high
