import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import linalg

from fcspdc_modeling.base.primitives import PMFKind, TophatFilter
from fcspdc_modeling.errors import DivisionByZero, GridMismatch, NonSquareGrid, Unachievable, ZeroAmplitude
from fcspdc_modeling.spectra import (
    JointAmplitude,
    SpectralGrid,
    apply_tophat_filter,
    band_mask,
    marginal_width,
    sideband_filter,
    symmetric_filter,
)
from fcspdc_modeling.tools.numba_tools import exchange_overlap, trace_purity

_log = logging.getLogger(__name__)

DEFAULT_PURITY_TARGET = 0.99


@dataclass(frozen=True)
class SchmidtSpectrum:
    """
    Schmidt coefficients of a biphoton amplitude, sorted in descending order and normalized so that
    sum(lambda_m^2) = 1.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        coefficients = np.asarray(self.coefficients, dtype=float)
        if coefficients.ndim != 1 or np.any(coefficients < 0):
            raise ValueError("Schmidt coefficients must be a 1d array of non-negative values")
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def schmidt_number(self) -> float:
        return float(1.0 / np.sum(self.coefficients**4))

    @property
    def purity(self) -> float:
        return float(np.sum(self.coefficients**4))

    def effective_modes(self, threshold: float = 1e-3) -> int:
        """Number of modes whose weight lambda_m^2 exceeds ``threshold``."""
        return int(np.sum(self.coefficients**2 > threshold))


def schmidt_decompose(f: JointAmplitude) -> SchmidtSpectrum:
    """
    Schmidt decomposition of a discretized joint amplitude.

    Parameters
    ----------
    f: JointAmplitude
        Amplitude whose rows index the first photon

    Returns
    -------
    spectrum: SchmidtSpectrum
        Singular values of the amplitude matrix, rescaled to unit sum of squares
    """
    if f.is_zero:
        raise ZeroAmplitude("Cannot decompose a zero amplitude")
    singular_values = linalg.svd(f.values, compute_uv=False, lapack_driver="gesdd")
    return SchmidtSpectrum(singular_values / np.sqrt(np.sum(singular_values**2)))


def purity(f: JointAmplitude) -> float:
    """Heralded single-photon purity P = 1 / K."""
    return schmidt_decompose(f).purity


def purity_by_trace(f: JointAmplitude) -> float:
    """Purity Tr[rho^2] / Tr[rho]^2 by explicit summation over the reduced density matrix."""
    if f.is_zero:
        raise ZeroAmplitude("Cannot compute the purity of a zero amplitude")
    return float(trace_purity(np.ascontiguousarray(f.values)))


def _require_square(f: JointAmplitude) -> None:
    if not f.grid.is_square:
        raise NonSquareGrid("Exchanging the two photons requires both grid axes to sample the same frequencies")
    if f.is_zero:
        raise ZeroAmplitude("A zero amplitude has no indistinguishability")


def indistinguishability(f: JointAmplitude) -> float:
    """
    Spectral indistinguishability of the two photons of a pair.

    The overlap of f with its exchanged (transposed, conjugated) copy, |sum f_qr f*_rq| / sum |f_qr|^2.
    """
    _require_square(f)
    values = f.values
    overlap = np.abs(np.vdot(values.T, values))
    return float(overlap / np.sum(np.abs(values) ** 2))


def indistinguishability_by_sum(f: JointAmplitude) -> float:
    _require_square(f)
    overlap, norm = exchange_overlap(np.ascontiguousarray(f.values))
    return float(overlap / norm)


def _full_norm(f: JointAmplitude) -> float:
    norm = f.norm_squared
    if norm == 0:
        raise ZeroAmplitude("The unfiltered amplitude is zero")
    return norm


def pair_pass_probability(f: JointAmplitude, tophat: Optional[TophatFilter]) -> float:
    """
    Probability P_both that both photons pass their filters, the ratio of filtered to unfiltered joint intensity.
    """
    norm = _full_norm(f)
    if tophat is None:
        return 1.0
    return float(apply_tophat_filter(f, tophat).norm_squared / norm)


def single_pass_probability(f: JointAmplitude, tophat: Optional[TophatFilter], herald_axis: int = 2) -> float:
    """
    Unconditional probability that the photon on ``herald_axis`` passes its band, whatever its partner does.
    """
    if herald_axis not in (1, 2):
        raise ValueError(f"herald_axis must be 1 or 2, found {herald_axis}")
    norm = _full_norm(f)
    if tophat is None:
        return 1.0
    band = tophat.band1_nm if herald_axis == 1 else tophat.band2_nm
    mask = band_mask(f.grid, herald_axis, band)
    marginal = f.marginal(herald_axis) * f.grid.step1 * f.grid.step2
    return float(np.sum(marginal[mask]) / norm)


def heralding_efficiency(f: JointAmplitude, tophat: Optional[TophatFilter], herald_axis: int = 2) -> float:
    """
    Heralding efficiency H = P_both / P_(i|j): the probability that one photon passes its filter given that its
    partner on ``herald_axis`` passed and was detected.

    Without a filter H is exactly 1.
    """
    if tophat is None:
        _full_norm(f)
        return 1.0
    p_single = single_pass_probability(f, tophat, herald_axis)
    if p_single == 0:
        raise DivisionByZero("No heralding photon passes its filter band")
    return pair_pass_probability(f, tophat) / p_single


def conversion_efficiency(f_eff: JointAmplitude, f_jsa: JointAmplitude) -> float:
    """
    Conversion efficiency eta_conv = |f_eff|^2 / |f_JSA|^2, the fraction of pairs whose idler is converted.

    Both norms are integrated with their grid weights. With a unit-peak conversion kernel the result lies in
    [0, 1].
    """
    if not f_eff.grid.shares_axis(1, f_jsa.grid, 1):
        raise GridMismatch("The effective JSA and the JSA must share their signal axis")
    norm = f_jsa.norm_squared
    if norm == 0:
        raise ZeroAmplitude("The JSA is zero")
    return float(f_eff.norm_squared / norm)


def full_window_filter(grid: SpectralGrid) -> TophatFilter:
    return symmetric_filter(grid, (grid.points - 1) / 2.0)


def _filtered_purity(f: JointAmplitude, half_steps: int) -> float:
    filtered = apply_tophat_filter(f, symmetric_filter(f.grid, half_steps))
    if filtered.is_zero:
        return 0.0
    return purity(filtered)


def minimal_filter_for_purity(f: JointAmplitude, target: float = DEFAULT_PURITY_TARGET) -> TophatFilter:
    """
    The least restrictive symmetric top-hat filter that lifts the purity of ``f`` to ``target``.

    The band is centered on the grid and identical on both axes. Its half-width is found by bisection in whole grid
    steps, assuming purity does not increase with width. An amplitude that is already pure enough gets the full
    window.

    Parameters
    ----------
    f: JointAmplitude
        Amplitude to filter
    target: float, default 0.99
        Purity to reach, in (0, 1]

    Returns
    -------
    tophat: TophatFilter

    Raises
    ------
    Unachievable
        If even a band of one grid step on either side of the center misses the target
    """
    if not 0 < target <= 1:
        raise ValueError(f"Purity target must lie in (0, 1], found {target}")
    if purity(f) >= target:
        return full_window_filter(f.grid)

    low = 1
    if _filtered_purity(f, low) < target:
        raise Unachievable(
            f"A purity of {target} cannot be reached on this grid, even the narrowest band gives "
            f"{_filtered_purity(f, low):.4f}"
        )
    high = (f.grid.points - 1) // 2
    while high - low > 1:
        mid = (low + high) // 2
        if _filtered_purity(f, mid) >= target:
            low = mid
        else:
            high = mid
    _log.debug("Minimal filter for purity %.3f keeps %d grid steps either side of center", target, low)
    return symmetric_filter(f.grid, low)


def purity_vs_filter_width(f: JointAmplitude, half_steps: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Purity and pair transmission of ``f`` behind symmetric filters of increasing width.

    Parameters
    ----------
    f: JointAmplitude
    half_steps: sequence of int, optional
        Band half-widths in grid steps. Defaults to 50 widths spread over the window.

    Returns
    -------
    scan: pd.DataFrame
        Columns half_steps, half_width_rad_per_fs, purity, pair_pass_probability
    """
    if half_steps is None:
        half_steps = np.unique(np.linspace(1, (f.grid.points - 1) // 2, 50).astype(int))
    rows = []
    for k in half_steps:
        tophat = symmetric_filter(f.grid, int(k))
        filtered = apply_tophat_filter(f, tophat)
        rows.append(
            {
                "half_steps": int(k),
                "half_width_rad_per_fs": (int(k) + 0.5) * f.grid.step1,
                "purity": purity(filtered),
                "pair_pass_probability": filtered.norm_squared / f.norm_squared,
            }
        )
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class MetricsReport:
    """
    Figures of merit of a (filtered) biphoton state.

    ``conversion_efficiency`` is None for a state that is not frequency converted.
    """

    purity: float
    indistinguishability: float
    schmidt_number: float
    heralding_efficiency: float
    pair_pass_probability: float
    single_pass_probability: float
    output_bandwidth: float
    conversion_efficiency: Optional[float] = None
    tophat: Optional[TophatFilter] = None
    grid: Optional[SpectralGrid] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in (
            "purity",
            "indistinguishability",
            "heralding_efficiency",
            "pair_pass_probability",
            "single_pass_probability",
            "conversion_efficiency",
        ):
            value = getattr(self, name)
            if value is None:
                continue
            # Round-off can put exact unit quantities a hair above 1
            if value > 1 and np.isclose(value, 1, rtol=0, atol=1e-9):
                object.__setattr__(self, name, 1.0)
            elif not 0 <= value <= 1:
                raise ValueError(f"{name} must lie in [0, 1], found {value}")
        if self.schmidt_number < 1 - 1e-9:
            raise ValueError(f"The Schmidt number cannot be below 1, found {self.schmidt_number}")

    @property
    def eta(self) -> float:
        """Optimization objective P x I."""
        return self.purity * self.indistinguishability

    def to_dict(self):
        return {
            "purity": self.purity,
            "indistinguishability": self.indistinguishability,
            "schmidt_number": self.schmidt_number,
            "eta": self.eta,
            "heralding_efficiency": self.heralding_efficiency,
            "pair_pass_probability": self.pair_pass_probability,
            "single_pass_probability": self.single_pass_probability,
            "conversion_efficiency": self.conversion_efficiency,
            "output_bandwidth_rad_per_fs": self.output_bandwidth,
            "filter": None if self.tophat is None else self.tophat.to_dict(),
            "grid": None if self.grid is None else self.grid.to_dict(),
            "units": {
                "probabilities": "dimensionless, in [0, 1]",
                "frequencies": "rad/fs",
                "wavelengths": "nm",
            },
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        tophat = d.pop("filter", None)
        grid = d.pop("grid", None)
        output_bandwidth = d.pop("output_bandwidth_rad_per_fs")
        names = (
            "purity",
            "indistinguishability",
            "schmidt_number",
            "heralding_efficiency",
            "pair_pass_probability",
            "single_pass_probability",
            "conversion_efficiency",
        )
        kwargs = {name: d.pop(name) for name in names}
        d.pop("eta", None)
        d.pop("units", None)
        return cls(
            **kwargs,
            output_bandwidth=output_bandwidth,
            tophat=None if tophat is None else TophatFilter(tuple(tophat["band1_nm"]), tuple(tophat["band2_nm"])),
            grid=None if grid is None else SpectralGrid.from_dict(grid),
            meta=d,
        )

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)

    def to_frame(self):
        d = {k: v for k, v in self.to_dict().items() if not isinstance(v, dict)}
        return pd.Series(d, name="value").to_frame()


def report_for(
    f: JointAmplitude,
    tophat: Optional[TophatFilter],
    f_jsa: Optional[JointAmplitude] = None,
    herald_axis: int = 2,
    meta: Optional[dict] = None,
) -> MetricsReport:
    """
    Assemble a MetricsReport of ``f`` behind ``tophat``.

    ``f_jsa`` is the pre-conversion JSA used for the conversion efficiency of a converted state ``f``.
    """
    filtered = f if tophat is None else apply_tophat_filter(f, tophat)
    spectrum = schmidt_decompose(filtered)
    eta_conv = None if f_jsa is None else conversion_efficiency(f, f_jsa)
    return MetricsReport(
        purity=spectrum.purity,
        indistinguishability=indistinguishability(filtered),
        schmidt_number=spectrum.schmidt_number,
        heralding_efficiency=heralding_efficiency(f, tophat, herald_axis),
        pair_pass_probability=pair_pass_probability(f, tophat),
        single_pass_probability=single_pass_probability(f, tophat, herald_axis),
        output_bandwidth=marginal_width(filtered, 1),
        conversion_efficiency=eta_conv,
        tophat=tophat,
        grid=f.grid,
        meta={} if meta is None else dict(meta),
    )


def evaluate_output(
    f_eff: JointAmplitude,
    f_jsa: Optional[JointAmplitude],
    pmf_kind: Union[PMFKind, str],
    tophat: Optional[TophatFilter] = None,
) -> MetricsReport:
    """
    Metrics of the output state of a frequency-converted source.

    A sinc-PMF output is first passed through :func:`sideband_filter` (unless ``tophat`` is given) to reject its
    sidebands. A Gaussian-PMF output has no sidebands and is reported unfiltered, so its heralding efficiency is
    exactly 1.
    """
    pmf_kind = PMFKind.parse(pmf_kind)
    if tophat is None and pmf_kind == PMFKind.SINC:
        tophat = sideband_filter(f_eff)
    return report_for(f_eff, tophat, f_jsa=f_jsa, meta={"pmf_kind": pmf_kind.value})
