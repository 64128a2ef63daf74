"""
Discretized joint spectral amplitudes of a frequency-converted pair source.

The SPDC region produces a joint spectral amplitude (JSA) over (omega_s, omega_i). The SFC region acts on the idler
through a joint conversion amplitude (JCA) over (omega_i, omega_FC). Contracting the two over omega_i gives the
effective JSA of the output pair over (omega_s, omega_FC).
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg

from fcspdc_modeling.base.primitives import (
    MAX_REGION_LENGTH_MM,
    MIN_REGION_LENGTH_MM,
    AmplitudeKind,
    BandwidthSet,
    FrequencyRelations,
    Leg,
    PMFKind,
    PolingSpec,
    TophatFilter,
)
from fcspdc_modeling.base.utilities import omega_to_wavelength, wavelength_to_omega
from fcspdc_modeling.dispersion import CrystalDispersion
from fcspdc_modeling.errors import (
    EmptyBand,
    EmptyFilterWarning,
    GridMismatch,
    InfeasibleConstraints,
    ZeroAmplitude,
)
from fcspdc_modeling.phasematch import (
    PhaseMatchConfig,
    SFCAxes,
    SPDCAxes,
    sfc_gradient,
    sfc_mismatch,
    solve_config_poling,
    spdc_gradient,
    spdc_mismatch,
)
from fcspdc_modeling.tools.numba_tools import contract_loops

_log = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 512
MIN_GRID_POINTS = 64

# sinc(x) ~ exp(-SINC_GAUSSIAN_MATCH * x^2) near its main lobe
SINC_GAUSSIAN_MATCH = 0.193
SINC_LENGTH_CONSTANT = np.sqrt(2.0 / SINC_GAUSSIAN_MATCH)

# Peak intensity of the first sinc^2 sidelobe relative to the main lobe
SINC_SIDELOBE_LEVEL = 0.0472

# Window half-width in units of the largest marginal standard deviation
WINDOW_SIGMAS = {PMFKind.GAUSSIAN: 5.0, PMFKind.SINC: 10.0}

KERNEL_NORMALIZATION = "unit_peak_kernel_singular_value"

_GRID_RTOL = 1e-12


@dataclass(frozen=True)
class SpectralGrid:
    """
    Uniform square discretization of a two-frequency window.

    Parameters
    ----------
    center1, center2: float
        Window centers in rad/fs. Axis 1 indexes the rows of an amplitude matrix and axis 2 the columns.
    half_width1, half_width2: float
        Window half-widths in rad/fs
    points: int, default 512
        Number of samples per axis, end points included
    """

    center1: float
    center2: float
    half_width1: float
    half_width2: float
    points: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        if int(self.points) != self.points or self.points < MIN_GRID_POINTS:
            raise ValueError(f"A spectral grid needs an integer number of points >= {MIN_GRID_POINTS}, found {self.points}")
        object.__setattr__(self, "points", int(self.points))
        for i in (1, 2):
            center, half_width = getattr(self, f"center{i}"), getattr(self, f"half_width{i}")
            if not (np.isfinite(center) and np.isfinite(half_width)) or half_width <= 0:
                raise ValueError(f"Axis {i} needs a positive, finite half-width, found {half_width}")
            if half_width >= center:
                raise ValueError(f"Axis {i} window [{center - half_width}, {center + half_width}] reaches omega <= 0")
            object.__setattr__(self, f"center{i}", float(center))
            object.__setattr__(self, f"half_width{i}", float(half_width))

    def axis(self, i: int) -> np.ndarray:
        center, half_width = getattr(self, f"center{i}"), getattr(self, f"half_width{i}")
        return np.linspace(center - half_width, center + half_width, self.points)

    @property
    def axis1(self) -> np.ndarray:
        return self.axis(1)

    @property
    def axis2(self) -> np.ndarray:
        return self.axis(2)

    def step(self, i: int) -> float:
        return 2.0 * getattr(self, f"half_width{i}") / (self.points - 1)

    @property
    def step1(self) -> float:
        return self.step(1)

    @property
    def step2(self) -> float:
        return self.step(2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.points, self.points

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis1, self.axis2, indexing="ij")

    def wavelengths_nm(self, i: int) -> np.ndarray:
        return omega_to_wavelength(self.axis(i))

    def transposed(self) -> "SpectralGrid":
        return SpectralGrid(self.center2, self.center1, self.half_width2, self.half_width1, self.points)

    def shares_axis(self, i: int, other: "SpectralGrid", j: int) -> bool:
        """True if axis ``i`` of this grid and axis ``j`` of ``other`` sample the same frequencies."""
        return (
            self.points == other.points
            and np.isclose(getattr(self, f"center{i}"), getattr(other, f"center{j}"), rtol=_GRID_RTOL, atol=0)
            and np.isclose(
                getattr(self, f"half_width{i}"), getattr(other, f"half_width{j}"), rtol=_GRID_RTOL, atol=0
            )
        )

    @property
    def is_square(self) -> bool:
        return self.shares_axis(1, self, 2)

    def to_dict(self):
        return {
            "center1_rad_per_fs": self.center1,
            "center2_rad_per_fs": self.center2,
            "half_width1_rad_per_fs": self.half_width1,
            "half_width2_rad_per_fs": self.half_width2,
            "points": self.points,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralGrid":
        return cls(
            d["center1_rad_per_fs"],
            d["center2_rad_per_fs"],
            d["half_width1_rad_per_fs"],
            d["half_width2_rad_per_fs"],
            d["points"],
        )


@dataclass(frozen=True, eq=False)
class JointAmplitude:
    """
    Complex amplitude values on a SpectralGrid, rows along axis 1.

    ``norm_squared`` integrates |f|^2 over the grid with its quadrature weights, so norms of amplitudes on different
    grids can be compared.
    """

    grid: SpectralGrid
    values: np.ndarray
    kind: AmplitudeKind
    normalization: str = "none"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.shape != self.grid.shape:
            raise GridMismatch(f"Amplitude of shape {values.shape} does not fit a grid of shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Joint amplitude values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", AmplitudeKind.parse(self.kind))

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    @property
    def norm_squared(self) -> float:
        return float(np.sum(self.intensity) * self.grid.step1 * self.grid.step2)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def marginal(self, i: int) -> np.ndarray:
        """Intensity marginal along axis ``i``, summed over the other axis."""
        return self.intensity.sum(axis=1 if i == 1 else 0)

    def transpose(self) -> "JointAmplitude":
        return JointAmplitude(self.grid.transposed(), self.values.T, self.kind, self.normalization)

    def with_values(self, values, kind=None, normalization=None) -> "JointAmplitude":
        return JointAmplitude(
            self.grid,
            values,
            self.kind if kind is None else kind,
            self.normalization if normalization is None else normalization,
        )

    def to_dict(self):
        return {"grid": self.grid.to_dict(), "kind": self.kind.value, "normalization": self.normalization}


def pump_envelope(grid: SpectralGrid, sigma_p: float, omega_p: float) -> JointAmplitude:
    """
    Antidiagonal pump envelope alpha = exp(-(omega_1 + omega_2 - omega_p)^2 / (2 sigma_p^2)).

    Parameters
    ----------
    grid: SpectralGrid
        (omega_s, omega_i) grid
    sigma_p: float
        Amplitude standard deviation of the pump spectrum in rad/fs
    omega_p: float
        Central pump frequency in rad/fs

    Returns
    -------
    alpha: JointAmplitude
        Envelope factor, 1 on the line omega_1 + omega_2 = omega_p
    """
    if not sigma_p > 0:
        raise ValueError(f"sigma_p must be positive, found {sigma_p}")
    w1, w2 = grid.mesh()
    values = np.exp(-((w1 + w2 - omega_p) ** 2) / (2.0 * sigma_p**2))
    return JointAmplitude(grid, values, AmplitudeKind.ENVELOPE)


def escort_envelope(grid: SpectralGrid, sigma_e: float, omega_e: float) -> JointAmplitude:
    """
    Diagonal escort envelope beta = exp(-(omega_2 - omega_1 - omega_e)^2 / (2 sigma_e^2)) on an (omega_i, omega_FC)
    grid.
    """
    if not sigma_e > 0:
        raise ValueError(f"sigma_e must be positive, found {sigma_e}")
    w1, w2 = grid.mesh()
    values = np.exp(-((w2 - w1 - omega_e) ** 2) / (2.0 * sigma_e**2))
    return JointAmplitude(grid, values, AmplitudeKind.ENVELOPE)


def _leg_axes(axes: Union[PhaseMatchConfig, SPDCAxes, SFCAxes], leg) -> Union[SPDCAxes, SFCAxes]:
    if isinstance(axes, PhaseMatchConfig):
        return axes.axes_for(leg)
    return axes


def leg_mismatch(
    grid: SpectralGrid,
    dispersion: CrystalDispersion,
    axes: Union[PhaseMatchConfig, SPDCAxes, SFCAxes],
    leg,
    poling: PolingSpec,
) -> np.ndarray:
    """
    Phase mismatch of one region evaluated on its grid, in rad/um.

    An SPDC grid is (omega_s, omega_i) with the pump at their sum. An SFC grid is (omega_i, omega_FC) with the escort
    at their difference.
    """
    leg = Leg.parse(leg)
    axes = _leg_axes(axes, leg)
    w1 = grid.axis1[:, None]
    w2 = grid.axis2[None, :]
    if leg == Leg.SPDC:
        return spdc_mismatch(dispersion, axes, w1 + w2, w1, w2, poling)
    return sfc_mismatch(dispersion, axes, w2 - w1, w1, w2, poling)


def leg_gradient(grid: SpectralGrid, dispersion: CrystalDispersion, axes, leg) -> np.ndarray:
    """Gradient of the mismatch of one region at the center of its grid, in fs/um."""
    leg = Leg.parse(leg)
    axes = _leg_axes(axes, leg)
    if leg == Leg.SPDC:
        return spdc_gradient(dispersion, axes, grid.center1, grid.center2)
    return sfc_gradient(dispersion, axes, grid.center1, grid.center2)


def pmf_sinc(
    grid: SpectralGrid,
    dispersion: CrystalDispersion,
    axes,
    leg,
    poling: PolingSpec,
    length_mm: Optional[float] = None,
) -> JointAmplitude:
    """
    Phase-matching function sinc(Δk L / 2) of a uniformly poled region.

    Parameters
    ----------
    grid: SpectralGrid
        Grid of the region, see :func:`leg_mismatch`
    dispersion: CrystalDispersion
        The crystal
    axes: PhaseMatchConfig, SPDCAxes or SFCAxes
        Polarizations of the region
    leg: Leg or str
        "spdc" or "sfc"
    poling: PolingSpec
        Poling of the region, including the grating term
    length_mm: float, optional
        Region length. Defaults to ``poling.length_mm``.

    Returns
    -------
    phi: JointAmplitude
        PMF factor, 1 where Δk = 0
    """
    length_mm = poling.length_mm if length_mm is None else float(length_mm)
    if not MIN_REGION_LENGTH_MM <= length_mm <= MAX_REGION_LENGTH_MM:
        raise ValueError(
            f"Region length must lie in [{MIN_REGION_LENGTH_MM}, {MAX_REGION_LENGTH_MM}] mm, found {length_mm}"
        )
    delta_k = leg_mismatch(grid, dispersion, axes, leg, poling)
    # np.sinc(x) = sin(pi x) / (pi x)
    values = np.sinc(delta_k * length_mm * 1e3 / (2.0 * np.pi))
    return JointAmplitude(grid, values, AmplitudeKind.PMF)


def pmf_gaussian(
    grid: SpectralGrid,
    dispersion: CrystalDispersion,
    axes,
    leg,
    poling: PolingSpec,
    sigma: float,
) -> JointAmplitude:
    """
    Gaussian phase-matching function exp(-Δk^2 / (2 s^2)) of a domain-engineered region.

    ``sigma`` is the amplitude standard deviation, in rad/fs, across the Δk = 0 ridge, measured along the ridge
    normal at the grid center. With |grad Δk| the mismatch gradient there, s = sigma |grad Δk|.
    """
    if not sigma > 0:
        raise ValueError(f"PMF bandwidth must be positive, found {sigma}")
    gradient_norm = float(np.linalg.norm(leg_gradient(grid, dispersion, axes, leg)))
    if gradient_norm == 0.0:
        raise InfeasibleConstraints("The phase mismatch has no first-order frequency dependence at the grid center")
    delta_k = leg_mismatch(grid, dispersion, axes, leg, poling)
    s = sigma * gradient_norm
    values = np.exp(-(delta_k**2) / (2.0 * s**2))
    return JointAmplitude(grid, values, AmplitudeKind.PMF)


def length_for_bandwidth(sigma, gradient_norm):
    """
    Region length in mm whose sinc PMF matches a Gaussian PMF of ridge-normal bandwidth ``sigma`` (rad/fs).

    Uses sinc(x) ~ exp(-0.193 x^2), giving L = sqrt(2 / 0.193) / (sigma |grad Δk|).
    """
    return SINC_LENGTH_CONSTANT / (np.asarray(sigma) * np.asarray(gradient_norm)) * 1e-3


def bandwidth_for_length(length_mm, gradient_norm):
    """Inverse of :func:`length_for_bandwidth`."""
    return SINC_LENGTH_CONSTANT / (np.asarray(length_mm) * 1e3 * np.asarray(gradient_norm))


def _check_factor_grids(a: JointAmplitude, b: JointAmplitude) -> None:
    if not (a.grid.shares_axis(1, b.grid, 1) and a.grid.shares_axis(2, b.grid, 2)):
        raise GridMismatch("Factors of a joint amplitude must be sampled on the same grid")


def jsa(alpha: JointAmplitude, phi: JointAmplitude) -> JointAmplitude:
    """Joint spectral amplitude f = alpha * phi."""
    _check_factor_grids(alpha, phi)
    return JointAmplitude(alpha.grid, alpha.values * phi.values, AmplitudeKind.JSA)


def normalize_kernel(f: JointAmplitude) -> JointAmplitude:
    """
    Rescale a conversion kernel so that the largest singular value of f * sqrt(step1 * step2) is 1.
    """
    weighted = f.values * np.sqrt(f.grid.step1 * f.grid.step2)
    top = linalg.svd(weighted, compute_uv=False)[0]
    if top == 0.0:
        raise ZeroAmplitude("Cannot normalize a zero conversion kernel")
    return JointAmplitude(f.grid, f.values / top, AmplitudeKind.JCA, KERNEL_NORMALIZATION)


def jca(beta: JointAmplitude, psi: JointAmplitude) -> JointAmplitude:
    """
    Joint conversion amplitude beta * psi, normalized to unit peak conversion.
    """
    _check_factor_grids(beta, psi)
    return normalize_kernel(JointAmplitude(beta.grid, beta.values * psi.values, AmplitudeKind.JCA))


def _check_contraction_grids(f_jca: JointAmplitude, f_jsa: JointAmplitude) -> None:
    if not f_jsa.grid.shares_axis(2, f_jca.grid, 1):
        raise GridMismatch(
            "The idler axis of the JSA (axis 2) and of the JCA (axis 1) must share center, step and point count"
        )


def effective_jsa(f_jca: JointAmplitude, f_jsa: JointAmplitude) -> JointAmplitude:
    """
    Effective JSA of the output pair, f_eff(omega_s, omega_FC) = integral f_JSA(omega_s, omega_i)
    f_JCA(omega_i, omega_FC) d omega_i, computed as a matrix product weighted by the idler step.
    """
    _check_contraction_grids(f_jca, f_jsa)
    grid = SpectralGrid(
        f_jsa.grid.center1, f_jca.grid.center2, f_jsa.grid.half_width1, f_jca.grid.half_width2, f_jsa.grid.points
    )
    values = (f_jsa.values @ f_jca.values) * f_jsa.grid.step2
    return JointAmplitude(grid, values, AmplitudeKind.EFFECTIVE, f_jca.normalization)


def effective_jsa_by_loops(f_jca: JointAmplitude, f_jsa: JointAmplitude) -> JointAmplitude:
    """Same as :func:`effective_jsa`, contracted with explicit loops."""
    _check_contraction_grids(f_jca, f_jsa)
    grid = SpectralGrid(
        f_jsa.grid.center1, f_jca.grid.center2, f_jsa.grid.half_width1, f_jca.grid.half_width2, f_jsa.grid.points
    )
    values = contract_loops(
        np.ascontiguousarray(f_jsa.values), np.ascontiguousarray(f_jca.values), f_jsa.grid.step2
    )
    return JointAmplitude(grid, values, AmplitudeKind.EFFECTIVE, f_jca.normalization)


def band_mask(grid: SpectralGrid, i: int, band_nm: tuple[float, float]) -> np.ndarray:
    """Boolean mask of the samples of axis ``i`` whose wavelength lies inside ``band_nm``."""
    low_nm, high_nm = band_nm
    omega_low = wavelength_to_omega(high_nm)
    omega_high = wavelength_to_omega(low_nm)
    axis = grid.axis(i)
    return (axis >= omega_low) & (axis <= omega_high)


def filter_mask(grid: SpectralGrid, tophat: TophatFilter) -> tuple[np.ndarray, np.ndarray]:
    return band_mask(grid, 1, tophat.band1_nm), band_mask(grid, 2, tophat.band2_nm)


def apply_tophat_filter(f: JointAmplitude, band_s, band_i=None) -> JointAmplitude:
    """
    Zero an amplitude outside a rectangular pass band.

    Parameters
    ----------
    f: JointAmplitude
        Amplitude to filter. It is not modified.
    band_s: TophatFilter or tuple of float
        Either a complete filter, or the (low, high) wavelength band in nm of axis 1
    band_i: tuple of float, optional
        The (low, high) wavelength band of axis 2, required unless ``band_s`` is a TophatFilter

    Returns
    -------
    filtered: JointAmplitude
        A new amplitude. A zero-width band gives the zero amplitude with an EmptyFilterWarning.
    """
    tophat = band_s if isinstance(band_s, TophatFilter) else TophatFilter(band_s, band_i)
    mask1, mask2 = filter_mask(f.grid, tophat)
    if tophat.is_zero_width:
        warnings.warn("Zero-width filter band, the filtered amplitude is zero", EmptyFilterWarning, stacklevel=2)
        return f.with_values(np.zeros(f.grid.shape), normalization="filtered_zero_width")
    if not mask1.any() or not mask2.any():
        raise EmptyBand(f"Filter bands {tophat.band1_nm}, {tophat.band2_nm} nm do not overlap the grid")
    return f.with_values(f.values * (mask1[:, None] & mask2[None, :]), normalization=f"{f.normalization}+filtered")


def principal_axis_angle(f: JointAmplitude) -> float:
    """
    Angle in degrees, in (-90, 90], of the major axis of the joint intensity measured from axis 1.

    The axis is the leading eigenvector of the intensity-weighted covariance of (omega_1, omega_2).
    """
    intensity = f.intensity
    total = intensity.sum()
    if total == 0:
        raise ZeroAmplitude("A zero amplitude has no principal axis")
    w1, w2 = f.grid.mesh()
    m1 = np.sum(intensity * w1) / total
    m2 = np.sum(intensity * w2) / total
    d1, d2 = w1 - m1, w2 - m2
    cov = np.array(
        [
            [np.sum(intensity * d1 * d1), np.sum(intensity * d1 * d2)],
            [np.sum(intensity * d1 * d2), np.sum(intensity * d2 * d2)],
        ]
    ) / total
    _, vectors = np.linalg.eigh(cov)
    major = vectors[:, -1]
    angle = np.degrees(np.arctan2(major[1], major[0]))
    if angle <= -90.0:
        angle += 180.0
    elif angle > 90.0:
        angle -= 180.0
    return float(angle)


def marginal_width(f: JointAmplitude, i: int = 1) -> float:
    """
    1/e^2 half-width, in rad/fs, of the intensity marginal along axis ``i``, taken as twice its standard deviation.
    """
    marginal = f.marginal(i)
    total = marginal.sum()
    if total == 0:
        raise ZeroAmplitude("A zero amplitude has no marginal width")
    axis = f.grid.axis(i)
    mean = np.sum(marginal * axis) / total
    return float(2.0 * np.sqrt(np.sum(marginal * (axis - mean) ** 2) / total))


def _lobe_edges(marginal: np.ndarray, level: float, flat_tol: float) -> tuple[int, int]:
    peak_idx = int(np.argmax(marginal))
    peak = marginal[peak_idx]
    n = len(marginal)

    def walk(step):
        j = peak_idx
        while 0 <= j + step < n:
            current, following = marginal[j], marginal[j + step]
            if current <= level * peak or current <= flat_tol * peak:
                break
            if following > current:
                break
            j += step
        return j

    return walk(-1), walk(1)


def sideband_filter(
    f: JointAmplitude, level: float = SINC_SIDELOBE_LEVEL, flat_tol: float = 1e-12
) -> TophatFilter:
    """
    Symmetric pass band that keeps the main lobe of a sinc-shaped output and rejects its sidebands.

    Walking out from the peak of each intensity marginal, a lobe ends at the first local minimum or where the
    marginal falls to ``level`` of its peak. The band is the same on both axes and wide enough for the wider lobe.
    """
    if f.is_zero:
        raise ZeroAmplitude("Cannot place a sideband filter on a zero amplitude")
    center = (f.grid.points - 1) / 2.0
    half_steps = 0.0
    for i in (1, 2):
        low, high = _lobe_edges(f.marginal(i), level, flat_tol)
        half_steps = max(half_steps, center - low, high - center)
    return symmetric_filter(f.grid, half_steps)


def symmetric_filter(grid: SpectralGrid, half_steps: float) -> TophatFilter:
    """
    Filter keeping ``half_steps`` grid steps on either side of the grid center on both axes.

    Half a step of margin is added so that samples on the band edge are kept.
    """
    half_steps = min(float(half_steps), (grid.points - 1) / 2.0)
    return TophatFilter.from_frequencies(
        grid.center1, (half_steps + 0.5) * grid.step1, grid.center2, (half_steps + 0.5) * grid.step2
    )


@dataclass(frozen=True)
class GaussianSurrogate:
    """
    Closed-form model of a frequency-converted source with Gaussian envelopes and Gaussian PMFs.

    Each factor is a Gaussian whose exponent is -1/2 v^T Q v. With the mismatch of each region linearized about the
    central frequencies, the JSA, the JCA and the effective JSA are all Gaussians, so purity, indistinguishability,
    conversion efficiency and marginal widths follow from 2x2 quadratic forms. Forms are returned as (A, B, C) for
    [[A, B], [B, C]] and broadcast over arrays of bandwidths.

    Parameters
    ----------
    spdc_gradient: array
        (dΔk/domega_s, dΔk/domega_i) of the SPDC region in fs/um
    sfc_gradient: array
        (dΔk/domega_i, dΔk/domega_FC) of the SFC region in fs/um
    """

    spdc_gradient: np.ndarray
    sfc_gradient: np.ndarray

    @staticmethod
    def _ridge_form(gradient, sigma):
        a, b = gradient
        norm = a**2 + b**2
        scale = 1.0 / (np.asarray(sigma) ** 2 * norm)
        return a**2 * scale, a * b * scale, b**2 * scale

    def jsa_form(self, sigma_p, sigma_phi):
        ap, bp, cp = self._ridge_form(self.spdc_gradient, sigma_phi)
        pump = 1.0 / np.asarray(sigma_p) ** 2
        return pump + ap, pump + bp, pump + cp

    def jca_form(self, sigma_e, sigma_psi):
        ap, bp, cp = self._ridge_form(self.sfc_gradient, sigma_psi)
        escort = 1.0 / np.asarray(sigma_e) ** 2
        return escort + ap, -escort + bp, escort + cp

    @staticmethod
    def effective_form(jsa_form, jca_form):
        a1, b1, c1 = jsa_form
        a2, b2, c2 = jca_form
        m = c1 + a2
        return a1 - b1**2 / m, -b1 * b2 / m, c2 - b2**2 / m

    @staticmethod
    def determinant(form):
        a, b, c = form
        return a * c - b**2

    @staticmethod
    def purity_of(form):
        a, b, c = form
        return np.sqrt(np.clip(1.0 - b**2 / (a * c), 0.0, 1.0))

    @staticmethod
    def indistinguishability_of(form):
        a, b, c = form
        det = np.clip(a * c - b**2, 0.0, None)
        return 2.0 * np.sqrt(det) / np.sqrt((a + c) ** 2 - 4.0 * b**2)

    @staticmethod
    def marginal_stds(form):
        """Amplitude standard deviations of the two marginals, sqrt of the diagonal of Q^-1."""
        a, b, c = form
        det = a * c - b**2
        return np.sqrt(c / det), np.sqrt(a / det)

    def evaluate(self, sigma_p, sigma_phi, sigma_e, sigma_psi) -> dict[str, np.ndarray]:
        """
        Metrics of the source for (arrays of) bandwidths in rad/fs.

        Returns a dict with purity, indistinguishability, efficiency, output_bandwidth (1/e^2 half-width of the
        signal marginal of the output) and the marginal amplitude standard deviations used to size grids. Entries
        are NaN where a form is degenerate.
        """
        q1 = self.jsa_form(sigma_p, sigma_phi)
        q2 = self.jca_form(sigma_e, sigma_psi)
        qe = self.effective_form(q1, q2)
        det1, det2, dete = (self.determinant(q) for q in (q1, q2, qe))
        valid = (det1 > 1e-12 * q1[0] * q1[2]) & (det2 > 1e-12 * q2[0] * q2[2]) & (dete > 1e-12 * qe[0] * qe[2])

        with np.errstate(divide="ignore", invalid="ignore"):
            m = q1[2] + q2[0]
            kernel_purity = self.purity_of(q2)
            mu_sq = (1.0 - kernel_purity) / (1.0 + kernel_purity)
            top_singular_sq = np.pi / np.sqrt(det2) * (1.0 - mu_sq)
            eff_norm = 2.0 * np.pi / m * np.pi / np.sqrt(dete)
            jsa_norm = np.pi / np.sqrt(det1)
            efficiency = eff_norm / (jsa_norm * top_singular_sq)

            jsa_s, jsa_i = self.marginal_stds(q1)
            eff_s, eff_fc = self.marginal_stds(qe)
            kernel_i, kernel_fc = self.marginal_stds(q2)

            out = {
                "purity": self.purity_of(qe),
                "indistinguishability": self.indistinguishability_of(qe),
                "efficiency": efficiency,
                "output_bandwidth": np.sqrt(2.0) * eff_s,
                "jsa_signal_std": jsa_s,
                "jsa_idler_std": jsa_i,
                "effective_signal_std": eff_s,
                "effective_converted_std": eff_fc,
                "kernel_idler_std": kernel_i,
                "kernel_converted_std": kernel_fc,
            }
        return {k: np.where(valid, v, np.nan) for k, v in out.items()}


@dataclass(frozen=True)
class SourceDesign:
    """
    A complete frequency-converted source: target wavelength, configuration, PMF kind, the four bandwidths and the
    poling of both regions (which carries their lengths).
    """

    lambda_deg_nm: float
    config: PhaseMatchConfig
    pmf_kind: PMFKind
    bandwidths: BandwidthSet
    spdc_poling: PolingSpec
    sfc_poling: PolingSpec

    def __post_init__(self):
        object.__setattr__(self, "pmf_kind", PMFKind.parse(self.pmf_kind))

    @property
    def relations(self) -> FrequencyRelations:
        return FrequencyRelations(self.lambda_deg_nm)

    def to_dict(self):
        return {
            "lambda_deg_nm": self.lambda_deg_nm,
            "config": self.config.id,
            "pmf_kind": self.pmf_kind.value,
            "bandwidths_rad_per_fs": self.bandwidths.to_dict(),
            "spdc_poling": self.spdc_poling.to_dict(),
            "sfc_poling": self.sfc_poling.to_dict(),
        }


def design_gradients(dispersion: CrystalDispersion, config: PhaseMatchConfig, relations: FrequencyRelations):
    g1 = spdc_gradient(dispersion, config.spdc_axes, relations.omega_signal, relations.omega_idler)
    g2 = sfc_gradient(dispersion, config.sfc_axes, relations.omega_idler, relations.omega_converted)
    return g1, g2


def make_design(
    dispersion: CrystalDispersion,
    lambda_deg_nm: float,
    config: PhaseMatchConfig,
    pmf_kind,
    bandwidths: BandwidthSet,
    strict_sign: bool = False,
) -> SourceDesign:
    """
    Solve the poling of both regions and map the PMF bandwidths to region lengths.

    Raises InfeasibleConstraints if a region would need a length outside [1, 30] mm.
    """
    relations = FrequencyRelations(lambda_deg_nm)
    g1, g2 = design_gradients(dispersion, config, relations)
    lengths = (
        float(length_for_bandwidth(bandwidths.sigma_phi, np.linalg.norm(g1))),
        float(length_for_bandwidth(bandwidths.sigma_psi, np.linalg.norm(g2))),
    )
    for name, length in zip(("SPDC", "SFC"), lengths):
        if not MIN_REGION_LENGTH_MM <= length <= MAX_REGION_LENGTH_MM:
            raise InfeasibleConstraints(
                f"The {name} bandwidth needs a {length:.3g} mm region, outside "
                f"[{MIN_REGION_LENGTH_MM:g}, {MAX_REGION_LENGTH_MM:g}] mm"
            )
    spdc = solve_config_poling(dispersion, config, Leg.SPDC, relations, lengths[0], strict_sign)
    sfc = solve_config_poling(dispersion, config, Leg.SFC, relations, lengths[1], strict_sign)
    return SourceDesign(float(lambda_deg_nm), config, PMFKind.parse(pmf_kind), bandwidths, spdc, sfc)


def window_room(dispersion: CrystalDispersion, axis, omega: float) -> float:
    """Largest frequency offset (rad/fs) from omega that stays inside the Sellmeier range of an axis."""
    low, high = dispersion.axes[dispersion.resolve_axis(axis)].valid_range_nm
    return 0.999 * min(omega - float(wavelength_to_omega(high)), float(wavelength_to_omega(low)) - omega)


def design_grids(
    dispersion: CrystalDispersion,
    design: SourceDesign,
    points: int = DEFAULT_GRID_POINTS,
    window_sigmas: Optional[float] = None,
) -> tuple[SpectralGrid, SpectralGrid]:
    """
    JSA and JCA grids for a design, sized from the Gaussian surrogate of its marginals.

    The signal and converted axes share one half-width, so the effective JSA lives on a square grid. Windows are
    clipped to stay inside the Sellmeier ranges of all five fields.
    """
    relations = design.relations
    g1, g2 = design_gradients(dispersion, design.config, relations)
    surrogate = GaussianSurrogate(g1, g2)
    bw = design.bandwidths
    stats = surrogate.evaluate(bw.sigma_p, bw.sigma_phi, bw.sigma_e, bw.sigma_psi)
    if not np.isfinite(stats["purity"]):
        raise InfeasibleConstraints("The bandwidths give a non-normalizable joint amplitude")

    factor = WINDOW_SIGMAS[design.pmf_kind] if window_sigmas is None else float(window_sigmas)
    half_shared = factor * max(
        stats["jsa_signal_std"], stats["effective_signal_std"], stats["effective_converted_std"],
        stats["kernel_converted_std"],
    )
    half_idler = factor * max(stats["jsa_idler_std"], stats["kernel_idler_std"])

    spdc, sfc = design.config.spdc_axes, design.config.sfc_axes
    w_s, w_i, w_fc = relations.omega_signal, relations.omega_idler, relations.omega_converted
    room_shared = min(window_room(dispersion, spdc.signal, w_s), window_room(dispersion, sfc.converted, w_fc))
    room_idler = window_room(dispersion, spdc.idler, w_i)
    room_pump = window_room(dispersion, spdc.pump, relations.omega_pump)
    room_escort = window_room(dispersion, sfc.escort, relations.omega_escort)

    scale = min(
        1.0,
        room_shared / half_shared,
        room_idler / half_idler,
        room_pump / (half_shared + half_idler),
        room_escort / (half_shared + half_idler),
    )
    if scale < 1.0:
        _log.debug("Clipping the spectral window to %.3g of its requested size to stay in the Sellmeier range", scale)
        half_shared *= scale
        half_idler *= scale

    jsa_grid = SpectralGrid(w_s, w_i, half_shared, half_idler, points)
    jca_grid = SpectralGrid(w_i, w_fc, half_idler, half_shared, points)
    return jsa_grid, jca_grid


@dataclass(frozen=True, eq=False)
class DesignAmplitudes:
    jsa: JointAmplitude
    jca: JointAmplitude
    effective: JointAmplitude


def build_amplitudes(
    dispersion: CrystalDispersion,
    design: SourceDesign,
    points: int = DEFAULT_GRID_POINTS,
    window_sigmas: Optional[float] = None,
) -> DesignAmplitudes:
    """
    Construct the JSA, the normalized JCA and the effective JSA of a design.

    Parameters
    ----------
    dispersion: CrystalDispersion
        The crystal
    design: SourceDesign
        Bandwidths, poling and region lengths
    points: int, default 512
        Samples per grid axis
    window_sigmas: float, optional
        Window half-width in marginal standard deviations. Defaults to 5 for Gaussian PMFs and 10 for sinc PMFs.

    Returns
    -------
    DesignAmplitudes
    """
    relations = design.relations
    jsa_grid, jca_grid = design_grids(dispersion, design, points, window_sigmas)
    bw = design.bandwidths
    config = design.config

    alpha = pump_envelope(jsa_grid, bw.sigma_p, relations.omega_pump)
    beta = escort_envelope(jca_grid, bw.sigma_e, relations.omega_escort)
    if design.pmf_kind == PMFKind.SINC:
        phi = pmf_sinc(jsa_grid, dispersion, config, Leg.SPDC, design.spdc_poling)
        psi = pmf_sinc(jca_grid, dispersion, config, Leg.SFC, design.sfc_poling)
    else:
        phi = pmf_gaussian(jsa_grid, dispersion, config, Leg.SPDC, design.spdc_poling, bw.sigma_phi)
        psi = pmf_gaussian(jca_grid, dispersion, config, Leg.SFC, design.sfc_poling, bw.sigma_psi)

    f_jsa = jsa(alpha, phi)
    f_jca = jca(beta, psi)
    return DesignAmplitudes(f_jsa, f_jca, effective_jsa(f_jca, f_jsa))
