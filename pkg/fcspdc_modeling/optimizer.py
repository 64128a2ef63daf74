"""
Bandwidth optimization, configuration selection and wavelength sweeps of frequency-converted pair sources.
"""

import json
import logging
import warnings
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from fastprogress.fastprogress import progress_bar
from scipy import linalg, optimize

from fcspdc_modeling.base.primitives import (
    MAX_REGION_LENGTH_MM,
    MIN_REGION_LENGTH_MM,
    BandwidthSet,
    Crystal,
    FrequencyRelations,
    Leg,
    PMFKind,
    PolingSpec,
)
from fcspdc_modeling.base.utilities import (
    CostFuncWrapper,
    _validate_interval,
    ensure_input_is_sequence,
    pulse_duration_to_sigma,
    wavelength_to_omega,
)
from fcspdc_modeling.dispersion import CrystalDispersion, load_crystal, solve_poling_period
from fcspdc_modeling.errors import (
    BelowCutoff,
    ConstraintWarning,
    EmptyInterval,
    InfeasibleConstraints,
    OutOfRange,
    PhysicsError,
)
from fcspdc_modeling.metrics import (
    DEFAULT_PURITY_TARGET,
    MetricsReport,
    evaluate_output,
    indistinguishability,
    minimal_filter_for_purity,
    purity,
    report_for,
)
from fcspdc_modeling.phasematch import (
    TYPE2_DEGENERATE,
    PhaseMatchConfig,
    SPDCAxes,
    get_config,
    list_configs,
    solve_config_poling,
    spdc_gradient,
)
from fcspdc_modeling.spectra import (
    WINDOW_SIGMAS,
    GaussianSurrogate,
    SourceDesign,
    SpectralGrid,
    apply_tophat_filter,
    bandwidth_for_length,
    build_amplitudes,
    design_gradients,
    jsa,
    make_design,
    pmf_gaussian,
    pmf_sinc,
    pump_envelope,
    sideband_filter,
    window_room,
)

_log = logging.getLogger(__name__)

SWEEP_UPPER_LIMIT_NM = 1600.0
DEFAULT_SEARCH_POINTS = 96
SCAN_POINTS_PER_AXIS = 7
MAX_RESCALE_ITERATIONS = 5
RESCALE_RTOL = 1e-3

# Keeps exact-boundary candidates feasible despite round-off
_CONSTRAINT_RTOL = 1e-12

BANDWIDTH_NAMES = ("sigma_p", "sigma_phi", "sigma_e", "sigma_psi")


@dataclass(frozen=True)
class OptimizationConstraints:
    """
    Feasible region of the four source bandwidths.

    Parameters
    ----------
    ratio_limit: float, default 2
        sigma_p / sigma_e and sigma_phi / sigma_psi must lie in [1 / ratio_limit, ratio_limit]
    normalized_bounds: tuple of float, default (0.1, 6)
        Box on each bandwidth divided by the output bandwidth
    pulse_duration_fs: tuple of float, default (5 fs, 1 ns)
        Transform-limited durations allowed for the pump and escort pulses
    region_length_mm: tuple of float, default (1, 30)
        Lengths allowed for the SPDC and SFC regions
    """

    ratio_limit: float = 2.0
    normalized_bounds: tuple[float, float] = (0.1, 6.0)
    pulse_duration_fs: tuple[float, float] = (5.0, 1e6)
    region_length_mm: tuple[float, float] = (MIN_REGION_LENGTH_MM, MAX_REGION_LENGTH_MM)

    def __post_init__(self):
        if not self.ratio_limit >= 1:
            raise ValueError(f"ratio_limit must be at least 1, found {self.ratio_limit}")
        for name in ("normalized_bounds", "pulse_duration_fs", "region_length_mm"):
            object.__setattr__(self, name, _validate_interval(name, getattr(self, name)))
        low, high = self.region_length_mm
        if low < MIN_REGION_LENGTH_MM or high > MAX_REGION_LENGTH_MM:
            raise ValueError(
                f"region_length_mm must lie inside [{MIN_REGION_LENGTH_MM:g}, {MAX_REGION_LENGTH_MM:g}] mm, "
                f"found {self.region_length_mm}"
            )

    @property
    def envelope_sigma_range(self) -> tuple[float, float]:
        """Range of pump and escort sigma (rad/fs) allowed by the pulse-duration bounds."""
        short, long = self.pulse_duration_fs
        return float(pulse_duration_to_sigma(long)), float(pulse_duration_to_sigma(short))

    def pmf_sigma_range(self, gradient_norm: float) -> tuple[float, float]:
        """Range of PMF sigma (rad/fs) reachable with the allowed region lengths."""
        short, long = self.region_length_mm
        return float(bandwidth_for_length(long, gradient_norm)), float(bandwidth_for_length(short, gradient_norm))

    def feasible_mask(self, normalized, output_bandwidth, spdc_gradient_norm, sfc_gradient_norm) -> np.ndarray:
        """
        Check candidates against every constraint.

        Parameters
        ----------
        normalized: array of shape (..., 4)
            (sigma_p, sigma_phi, sigma_e, sigma_psi) divided by the output bandwidth
        output_bandwidth: float
            Output bandwidth in rad/fs
        spdc_gradient_norm, sfc_gradient_norm: float
            |grad Δk| of the two regions in fs/um, used to map PMF bandwidths to lengths

        Returns
        -------
        mask: np.ndarray of bool
        """
        x = np.asarray(normalized, dtype=float)
        lo, hi = self.normalized_bounds
        slack = 1.0 + _CONSTRAINT_RTOL
        ok = np.all(np.isfinite(x), axis=-1)
        ok &= np.all((x >= lo / slack) & (x <= hi * slack), axis=-1)
        r = self.ratio_limit * slack
        ok &= (x[..., 0] <= r * x[..., 2]) & (x[..., 2] <= r * x[..., 0])
        ok &= (x[..., 1] <= r * x[..., 3]) & (x[..., 3] <= r * x[..., 1])

        sigma = x * output_bandwidth
        env_lo, env_hi = self.envelope_sigma_range
        for k in (0, 2):
            ok &= (sigma[..., k] >= env_lo / slack) & (sigma[..., k] <= env_hi * slack)
        for k, g in ((1, spdc_gradient_norm), (3, sfc_gradient_norm)):
            pmf_lo, pmf_hi = self.pmf_sigma_range(g)
            ok &= (sigma[..., k] >= pmf_lo / slack) & (sigma[..., k] <= pmf_hi * slack)
        return ok

    def violations(
        self, bandwidths: BandwidthSet, spdc_gradient_norm, sfc_gradient_norm, rtol: float = 0.0
    ) -> list[str]:
        """Names of the constraints a bandwidth set breaks, empty if it is feasible. Bounds are widened by ``rtol``."""
        if bandwidths.output_bandwidth is None:
            raise ValueError("Checking constraints requires the output bandwidth of the set")
        sigma = bandwidths.as_array()
        x = sigma / bandwidths.output_bandwidth
        slack = 1.0 + rtol
        out = []
        lo, hi = self.normalized_bounds
        out += [f"{n}_normalized" for n, v in zip(BANDWIDTH_NAMES, x) if not lo / slack <= v <= hi * slack]
        r = self.ratio_limit * slack
        if not 1 / r <= sigma[0] / sigma[2] <= r:
            out.append("envelope_ratio")
        if not 1 / r <= sigma[1] / sigma[3] <= r:
            out.append("pmf_ratio")
        env_lo, env_hi = self.envelope_sigma_range
        out += [
            f"{BANDWIDTH_NAMES[k]}_pulse_duration" for k in (0, 2) if not env_lo / slack <= sigma[k] <= env_hi * slack
        ]
        for k, g in ((1, spdc_gradient_norm), (3, sfc_gradient_norm)):
            pmf_lo, pmf_hi = self.pmf_sigma_range(g)
            if not pmf_lo / slack <= sigma[k] <= pmf_hi * slack:
                out.append(f"{BANDWIDTH_NAMES[k]}_region_length")
        return out

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def feasible_output_bandwidths(
    dispersion: CrystalDispersion,
    lambda_deg_nm: float,
    config: Union[PhaseMatchConfig, str],
    constraints: Optional[OptimizationConstraints] = None,
) -> tuple[float, float]:
    """
    Interval of output bandwidths (rad/fs) a configuration can reach within the constraints.

    Each bandwidth is bounded in absolute terms, by the pulse durations for the envelopes and by the region
    lengths for the PMFs, and relative to the output bandwidth by the normalized box. The output bandwidth must
    leave every bandwidth a non-empty range, and the two PMF ranges must be reconcilable within the ratio limit.

    Raises
    ------
    EmptyInterval
        If no output bandwidth satisfies every constraint
    """
    constraints = OptimizationConstraints() if constraints is None else constraints
    config = get_config(dispersion, config)
    g1, g2 = design_gradients(dispersion, config, FrequencyRelations(lambda_deg_nm))
    env = constraints.envelope_sigma_range
    phi = constraints.pmf_sigma_range(float(np.linalg.norm(g1)))
    psi = constraints.pmf_sigma_range(float(np.linalg.norm(g2)))
    x_lo, x_hi = constraints.normalized_bounds
    r = constraints.ratio_limit

    if phi[0] > r * psi[1] or psi[0] > r * phi[1]:
        raise EmptyInterval(
            f"Configuration {config.id} at {lambda_deg_nm:g} nm: the SPDC and SFC bandwidths reachable with "
            f"the allowed region lengths differ by more than a factor {r:g}"
        )
    low = max(env[0], phi[0], psi[0]) / x_hi
    high = min(env[1], phi[1], psi[1]) / x_lo
    if low > high:
        raise EmptyInterval(
            f"Configuration {config.id} at {lambda_deg_nm:g} nm: no output bandwidth satisfies the pulse, length "
            f"and normalized-bandwidth constraints (need {low:.4g} <= sigma_out <= {high:.4g} rad/fs)"
        )
    return float(low), float(high)


def nelder_mead_runs(
    objective: Callable,
    starts: Sequence,
    seed: int = 0,
    is_feasible: Optional[Callable] = None,
    bounds: Optional[Sequence] = None,
    initial_step: float = 0.15,
    maxiter: int = 200,
    xatol: float = 1e-3,
    fatol: float = 1e-6,
    penalty: float = 1.0,
    progressbar: bool = False,
) -> list[tuple[Optional[np.ndarray], float, int]]:
    """
    Minimize ``objective`` with Nelder-Mead from each of several starting points.

    Parameters
    ----------
    objective: callable
        Function of a 1d array to minimize
    starts: sequence of arrays
        Starting points, in order of preference
    seed: int
        Seed of the initial-simplex jitter. Start ``i`` draws from ``np.random.default_rng([seed, i])``, so adding
        starts never changes the runs of the earlier ones.
    is_feasible: callable, optional
        Candidates for which this returns False get ``penalty`` without calling ``objective``
    bounds: sequence of (low, high), optional
        Box passed through to scipy
    initial_step: float
        Edge length of the initial simplex
    maxiter, xatol, fatol:
        Nelder-Mead options
    penalty: float
        Value assigned to rejected candidates
    progressbar: bool
        Show a fastprogress bar per start

    Returns
    -------
    runs: list of (best_x, best_value, n_evaluations)
        One entry per start, in start order. ``best_x`` is None when the start never reached a feasible point.
    """
    runs = []
    for i, start in enumerate(starts):
        start = np.asarray(start, dtype=float)
        rng = np.random.default_rng([seed, i])
        steps = initial_step * (1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=start.size))
        simplex = np.vstack([start, start + np.diag(steps)])

        f = CostFuncWrapper(
            objective, is_feasible=is_feasible, penalty=penalty, maxeval=(start.size + 1) * maxiter,
            progressbar=progressbar,
        )
        f(start)
        optimize.minimize(
            f,
            start,
            method="Nelder-Mead",
            bounds=bounds,
            callback=f.callback,
            options={"initial_simplex": simplex, "maxiter": maxiter, "xatol": xatol, "fatol": fatol},
        )
        _log.debug("Start %d: best value %.6g after %d evaluations (%d rejected)", i, f.best_value, f.n_eval,
                   f.n_rejected)
        runs.append((f.best_x, float(f.best_value), f.n_eval))
    return runs


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    """Optimized source at one degeneracy wavelength for one configuration and PMF kind."""

    design: SourceDesign
    report: MetricsReport
    output_interval: tuple[float, float]
    target_output_bandwidth: float
    n_evaluations: int = 0

    @property
    def config(self) -> PhaseMatchConfig:
        return self.design.config

    @property
    def bandwidths(self) -> BandwidthSet:
        return self.design.bandwidths

    @property
    def eta(self) -> float:
        return self.report.eta


class _BandwidthSearch:
    """
    Numeric objective and feasibility test of the bandwidth optimization, in log-bandwidth coordinates.

    A point u (four raw bandwidths) is mapped to normalized bandwidths x = u / s(u), with s the surrogate output
    bandwidth, and then to absolute bandwidths x * target. Both the scan and the refinement therefore only visit
    candidates whose predicted output bandwidth is the target.
    """

    def __init__(self, dispersion, lambda_deg_nm, config, pmf_kind, constraints, target, search_points):
        self.dispersion = dispersion
        self.lambda_deg_nm = lambda_deg_nm
        self.config = config
        self.pmf_kind = pmf_kind
        self.constraints = constraints
        self.target = target
        self.search_points = search_points

        g1, g2 = design_gradients(dispersion, config, FrequencyRelations(lambda_deg_nm))
        self.surrogate = GaussianSurrogate(g1, g2)
        self.gradient_norms = float(np.linalg.norm(g1)), float(np.linalg.norm(g2))

    def normalized(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        s = self.surrogate.evaluate(*np.moveaxis(u, -1, 0))["output_bandwidth"]
        return u / s[..., None]

    def feasible(self, x: np.ndarray) -> np.ndarray:
        return self.constraints.feasible_mask(x, self.target, *self.gradient_norms)

    def is_feasible(self, log_u) -> bool:
        return bool(self.feasible(self.normalized(np.exp(log_u)[None, :]))[0])

    def coarse_scan(self, points: int = SCAN_POINTS_PER_AXIS) -> tuple[np.ndarray, np.ndarray]:
        """
        Rank a log-spaced grid of candidates by the surrogate P x I.

        Returns the feasible raw candidates in descending order of their surrogate objective, and those values.
        """
        lo, hi = self.constraints.normalized_bounds
        axis = np.geomspace(lo, hi, points)
        u = np.stack(np.meshgrid(axis, axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 4)
        x = self.normalized(u)
        mask = self.feasible(x)
        if not mask.any():
            raise InfeasibleConstraints(
                f"No candidate of the coarse scan satisfies the constraints for configuration {self.config.id} at "
                f"{self.lambda_deg_nm:g} nm"
            )
        stats = self.surrogate.evaluate(*u[mask].T)
        eta = np.nan_to_num(stats["purity"] * stats["indistinguishability"], nan=-1.0)
        order = np.argsort(-eta, kind="stable")
        return u[mask][order], eta[order]

    def sigmas(self, log_u) -> np.ndarray:
        return self.normalized(np.exp(log_u)[None, :])[0] * self.target

    def objective(self, log_u) -> float:
        """-(P x I) of the numerically constructed output state on the search grid."""
        sigma = self.sigmas(log_u)
        try:
            design = make_design(
                self.dispersion, self.lambda_deg_nm, self.config, self.pmf_kind,
                BandwidthSet.from_array(sigma, self.target),
            )
            amplitudes = build_amplitudes(self.dispersion, design, points=self.search_points)
            f = amplitudes.effective
            if self.pmf_kind == PMFKind.SINC:
                f = apply_tophat_filter(f, sideband_filter(f))
            return -purity(f) * indistinguishability(f)
        except (PhysicsError, linalg.LinAlgError) as e:
            _log.debug("Rejected candidate %s: %s", sigma, e)
            return 1.0


def _resolve_target(interval, target) -> float:
    low, high = interval
    if target is None:
        return float(np.sqrt(low * high))
    if not low <= target <= high:
        clamped = float(np.clip(target, low, high))
        warnings.warn(
            f"Target output bandwidth {target:.4g} rad/fs lies outside the feasible interval "
            f"[{low:.4g}, {high:.4g}], using {clamped:.4g}",
            ConstraintWarning,
            stacklevel=3,
        )
        return clamped
    return float(target)


def optimize_bandwidths(
    dispersion: CrystalDispersion,
    lambda_deg_nm: float,
    config: Union[PhaseMatchConfig, str],
    pmf_kind: Union[PMFKind, str],
    constraints: Optional[OptimizationConstraints] = None,
    target_output_bandwidth: Optional[float] = None,
    n_starts: int = 5,
    seed: int = 0,
    search_points: int = DEFAULT_SEARCH_POINTS,
    grid_points: int = 512,
    maxiter: int = 200,
    progressbar: bool = False,
) -> OptimizationResult:
    """
    Maximize eta = P x I of the output state over the four bandwidths.

    The search first ranks a coarse log-spaced grid of candidates with the closed-form Gaussian model, then refines
    the best ``n_starts`` with Nelder-Mead on numerically constructed amplitudes. The best point of every start is
    rescaled until the output bandwidth of its full-resolution state matches the target, and the start with the
    highest full-resolution eta wins. Starts whose rescaled bandwidths break ``constraints`` are dropped.

    Parameters
    ----------
    dispersion: CrystalDispersion
        The crystal
    lambda_deg_nm: float
        Degeneracy wavelength in nm
    config: PhaseMatchConfig or str
        Phase-matching configuration, e.g. "II"
    pmf_kind: PMFKind or str
        "sinc" or "gaussian"
    constraints: OptimizationConstraints, optional
        Defaults to the standard constraint set
    target_output_bandwidth: float, optional
        Output bandwidth in rad/fs the bandwidths are normalized to. Defaults to the geometric mean of the feasible
        interval. Values outside the interval are clamped with a ConstraintWarning.
    n_starts: int, default 5
        Number of refinement starts
    seed: int, default 0
        Seed of the initial-simplex jitter
    search_points: int, default 96
        Grid points per axis during refinement
    grid_points: int, default 512
        Grid points per axis of the final state
    maxiter: int, default 200
        Nelder-Mead iterations per start
    progressbar: bool, default False
        Show progress of each refinement start

    Returns
    -------
    OptimizationResult
    """
    constraints = OptimizationConstraints() if constraints is None else constraints
    config = get_config(dispersion, config)
    pmf_kind = PMFKind.parse(pmf_kind)
    if n_starts < 1:
        raise ValueError(f"n_starts must be at least 1, found {n_starts}")

    relations = FrequencyRelations(lambda_deg_nm)
    solve_config_poling(dispersion, config, Leg.SPDC, relations)
    solve_config_poling(dispersion, config, Leg.SFC, relations)

    try:
        interval = feasible_output_bandwidths(dispersion, lambda_deg_nm, config, constraints)
    except EmptyInterval as e:
        raise InfeasibleConstraints(str(e)) from e
    target = _resolve_target(interval, target_output_bandwidth)

    search = _BandwidthSearch(dispersion, lambda_deg_nm, config, pmf_kind, constraints, target, search_points)
    candidates, scan_eta = search.coarse_scan()
    starts = np.log(candidates[:n_starts])
    _log.debug(
        "Config %s at %.1f nm: %d feasible scan candidates, best surrogate eta %.4f",
        config.id, lambda_deg_nm, len(candidates), scan_eta[0],
    )

    runs = nelder_mead_runs(
        search.objective, starts, seed=seed, is_feasible=search.is_feasible, maxiter=maxiter,
        progressbar=progressbar,
    )
    n_eval = sum(n for _, _, n in runs)

    # Every start is finished at full resolution, ties go to the earlier start
    best, evaluated, rejected = None, [], []
    for i, (log_u, value, _) in enumerate(runs):
        if log_u is None or value >= 0 or any(np.allclose(log_u, seen) for seen in evaluated):
            continue
        evaluated.append(log_u)
        try:
            design, report = _rescale_to_target(
                dispersion, lambda_deg_nm, config, pmf_kind, search.sigmas(log_u), target, grid_points, constraints,
                search.gradient_norms,
            )
        except InfeasibleConstraints as e:
            _log.debug("Start %d rejected after rescaling: %s", i, e)
            rejected.append(str(e))
            continue
        if best is None or report.eta > best[1].eta:
            best = design, report

    if best is None:
        reason = f": {rejected[0]}" if rejected else ""
        raise InfeasibleConstraints(
            f"Configuration {config.id} at {lambda_deg_nm:g} nm: no candidate produced a valid output state{reason}"
        )

    design, report = best
    _log.info(
        "Config %s at %.1f nm (%s): P = %.4f, I = %.4f, eta = %.4f",
        config.id, lambda_deg_nm, pmf_kind.value, report.purity, report.indistinguishability, report.eta,
    )
    return OptimizationResult(design, report, interval, target, n_eval)


def _rescale_to_target(
    dispersion, lambda_deg_nm, config, pmf_kind, sigma, target, grid_points, constraints, gradient_norms
):
    """
    Scale all four bandwidths together until the full-grid output bandwidth matches the target.

    Raises InfeasibleConstraints when the rescaled bandwidths break ``constraints`` by more than the rescaling
    tolerance.
    """
    design = report = None
    for _ in range(MAX_RESCALE_ITERATIONS):
        try:
            candidate = make_design(
                dispersion, lambda_deg_nm, config, pmf_kind, BandwidthSet.from_array(sigma, target)
            )
        except InfeasibleConstraints:
            if design is None:
                raise
            warnings.warn(
                "Rescaling toward the target output bandwidth left the region-length bounds, keeping the last "
                "feasible bandwidths",
                ConstraintWarning,
                stacklevel=3,
            )
            break
        amplitudes = build_amplitudes(dispersion, candidate, points=grid_points)
        design = candidate
        report = evaluate_output(amplitudes.effective, amplitudes.jsa, pmf_kind)
        ratio = target / report.output_bandwidth
        if abs(ratio - 1.0) < RESCALE_RTOL:
            break
        sigma = sigma * ratio

    bandwidths = BandwidthSet.from_array(design.bandwidths.as_array(), report.output_bandwidth)
    broken = constraints.violations(bandwidths, *gradient_norms, rtol=RESCALE_RTOL)
    if broken:
        raise InfeasibleConstraints(
            f"Rescaled bandwidths {np.array2string(bandwidths.as_array(), precision=4)} rad/fs break "
            f"{', '.join(broken)}"
        )
    design = SourceDesign(
        design.lambda_deg_nm, design.config, design.pmf_kind, bandwidths, design.spdc_poling, design.sfc_poling
    )
    return design, report


@dataclass(frozen=True, eq=False)
class ConventionalResult:
    """
    Degenerate type-2 SPDC source with a pump at half the output wavelength, filtered to a target purity.
    """

    lambda_deg_nm: float
    pmf_kind: PMFKind
    sigma_p: float
    poling: PolingSpec
    unfiltered_purity: float
    report: MetricsReport

    def to_dict(self):
        return {
            "lambda_deg_nm": self.lambda_deg_nm,
            "pmf_kind": PMFKind.parse(self.pmf_kind).value,
            "sigma_p": self.sigma_p,
            "poling": self.poling.to_dict(),
            "unfiltered_purity": self.unfiltered_purity,
            "report": self.report.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConventionalResult":
        return cls(
            d["lambda_deg_nm"],
            PMFKind.parse(d["pmf_kind"]),
            d["sigma_p"],
            PolingSpec(**d["poling"]),
            d["unfiltered_purity"],
            MetricsReport.from_dict(d["report"]),
        )


def _degenerate_jsa(dispersion, axes, poling, pmf_kind, omega, gradient, sigma_p, sigma_phi, points):
    form = GaussianSurrogate(gradient, gradient).jsa_form(sigma_p, sigma_phi)
    std_s, std_i = GaussianSurrogate.marginal_stds(form)
    half_width = WINDOW_SIGMAS[pmf_kind] * max(std_s, std_i)
    room = min(
        window_room(dispersion, axes.signal, omega),
        window_room(dispersion, axes.idler, omega),
        window_room(dispersion, axes.pump, 2.0 * omega) / 2.0,
    )
    grid = SpectralGrid(omega, omega, min(half_width, room), min(half_width, room), points)

    alpha = pump_envelope(grid, sigma_p, 2.0 * omega)
    if pmf_kind == PMFKind.SINC:
        phi = pmf_sinc(grid, dispersion, axes, Leg.SPDC, poling)
    else:
        phi = pmf_gaussian(grid, dispersion, axes, Leg.SPDC, poling, sigma_phi)
    return jsa(alpha, phi)


def conventional_degenerate(
    dispersion: CrystalDispersion,
    lambda_deg_nm: float,
    pmf_kind: Union[PMFKind, str] = PMFKind.SINC,
    axes: SPDCAxes = TYPE2_DEGENERATE,
    length_mm: float = 10.0,
    target_purity: float = DEFAULT_PURITY_TARGET,
    points: int = 512,
    search_points: int = 128,
) -> ConventionalResult:
    """
    Best conventional source at ``lambda_deg_nm``: degenerate type-2 SPDC pumped at half the wavelength.

    The pump bandwidth is chosen to maximize the unfiltered purity, then the widest symmetric filter that reaches
    ``target_purity`` is applied. The pair transmission of that filter is the efficiency to compare against the
    conversion efficiency of a frequency-converted source.

    Raises
    ------
    BelowCutoff
        If the pump at lambda_deg / 2 lies below the absorption edge of the crystal
    """
    pmf_kind = PMFKind.parse(pmf_kind)
    pump_nm = lambda_deg_nm / 2.0
    if pump_nm <= dispersion.cutoff_nm:
        raise BelowCutoff(
            f"The degenerate pump at {pump_nm:g} nm lies below the {dispersion.crystal.value} absorption edge "
            f"{dispersion.cutoff_nm:g} nm"
        )
    poling = solve_poling_period(
        dispersion, axes, Leg.SPDC, (pump_nm, lambda_deg_nm, lambda_deg_nm), length_mm=length_mm
    )
    omega = float(wavelength_to_omega(lambda_deg_nm))
    gradient = spdc_gradient(dispersion, axes, omega, omega)
    sigma_phi = float(bandwidth_for_length(length_mm, np.linalg.norm(gradient)))

    def build(sigma_p, n):
        return _degenerate_jsa(dispersion, axes, poling, pmf_kind, omega, gradient, sigma_p, sigma_phi, n)

    res = optimize.minimize_scalar(
        lambda t: -purity(build(sigma_phi * np.exp(t), search_points)),
        bounds=(np.log(0.05), np.log(20.0)),
        method="bounded",
        options={"xatol": 1e-3},
    )
    sigma_p = float(sigma_phi * np.exp(res.x))
    f = build(sigma_p, points)
    unfiltered = purity(f)
    tophat = minimal_filter_for_purity(f, target_purity)
    report = report_for(f, tophat, meta={"pmf_kind": pmf_kind.value, "source": "conventional_degenerate"})
    _log.debug(
        "Conventional source at %.1f nm: unfiltered P = %.4f, filtered P_both = %.4f",
        lambda_deg_nm, unfiltered, report.pair_pass_probability,
    )
    return ConventionalResult(float(lambda_deg_nm), pmf_kind, sigma_p, poling, unfiltered, report)


@dataclass(frozen=True, eq=False)
class SweepResult:
    """
    Best frequency-converted source at one degeneracy wavelength.

    ``candidate_eta`` holds the objective reached by every configuration that could be optimized, and
    ``config_errors`` the reason for every configuration that could not.
    """

    lambda_deg_nm: float
    crystal: Crystal
    pmf_kind: PMFKind
    config_id: str
    bandwidths: BandwidthSet
    report: MetricsReport
    spdc_poling: PolingSpec
    sfc_poling: PolingSpec
    output_interval: tuple[float, float]
    candidate_eta: dict = field(default_factory=dict)
    config_errors: dict = field(default_factory=dict)
    conventional: Optional[ConventionalResult] = None

    @property
    def eta(self) -> float:
        return self.report.eta

    def to_row(self) -> dict:
        """One flat CSV row with unit-suffixed column names."""
        report = self.report
        row = {
            "lambda_deg_nm": self.lambda_deg_nm,
            "config": self.config_id,
            "purity": report.purity,
            "indistinguishability": report.indistinguishability,
            "eta": report.eta,
            "schmidt_number": report.schmidt_number,
            "heralding_efficiency": report.heralding_efficiency,
            "pair_pass_probability": report.pair_pass_probability,
            "conversion_efficiency": report.conversion_efficiency,
            "output_bandwidth_rad_per_fs": report.output_bandwidth,
        }
        for name, value in zip(BANDWIDTH_NAMES, self.bandwidths.as_array()):
            row[f"{name}_rad_per_fs"] = value
        for name, value in self.bandwidths.normalized.items():
            row[f"{name}_norm"] = value
        for leg, poling in (("spdc", self.spdc_poling), ("sfc", self.sfc_poling)):
            row[f"period_{leg}_um"] = poling.period_um
            row[f"direction_{leg}"] = poling.direction
            row[f"length_{leg}_mm"] = poling.length_mm
        row["sigma_out_min_rad_per_fs"], row["sigma_out_max_rad_per_fs"] = self.output_interval

        conv = self.conventional
        row["conventional_unfiltered_purity"] = np.nan if conv is None else conv.unfiltered_purity
        row["conventional_purity"] = np.nan if conv is None else conv.report.purity
        row["conventional_pair_pass_probability"] = np.nan if conv is None else conv.report.pair_pass_probability
        row["conventional_heralding_efficiency"] = np.nan if conv is None else conv.report.heralding_efficiency
        return row

    def to_dict(self):
        return {
            "lambda_deg_nm": self.lambda_deg_nm,
            "crystal": self.crystal.value,
            "pmf_kind": self.pmf_kind.value,
            "config_id": self.config_id,
            "bandwidths": asdict(self.bandwidths),
            "report": self.report.to_dict(),
            "spdc_poling": self.spdc_poling.to_dict(),
            "sfc_poling": self.sfc_poling.to_dict(),
            "output_interval": list(self.output_interval),
            "candidate_eta": dict(self.candidate_eta),
            "config_errors": dict(self.config_errors),
            "conventional": None if self.conventional is None else self.conventional.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        return cls(
            lambda_deg_nm=d["lambda_deg_nm"],
            crystal=Crystal.parse(d["crystal"]),
            pmf_kind=PMFKind.parse(d["pmf_kind"]),
            config_id=d["config_id"],
            bandwidths=BandwidthSet(**d["bandwidths"]),
            report=MetricsReport.from_dict(d["report"]),
            spdc_poling=PolingSpec(**d["spdc_poling"]),
            sfc_poling=PolingSpec(**d["sfc_poling"]),
            output_interval=tuple(d["output_interval"]),
            candidate_eta=d.get("candidate_eta", {}),
            config_errors=d.get("config_errors", {}),
            conventional=None if d.get("conventional") is None else ConventionalResult.from_dict(d["conventional"]),
        )


def select_configuration(
    dispersion: CrystalDispersion,
    lambda_deg_nm: float,
    pmf_kind: Union[PMFKind, str],
    constraints: Optional[OptimizationConstraints] = None,
    configs: Optional[Sequence] = None,
    **optimize_kwargs,
) -> SweepResult:
    """
    Optimize every admissible configuration at ``lambda_deg_nm`` and keep the one with the largest eta.

    Ties go to the configuration listed first (the lower id). Configurations that fail with a physics error are
    recorded in ``config_errors`` and skipped.

    Raises
    ------
    BelowCutoff
        If ``lambda_deg_nm`` lies below 4/3 of the absorption edge, where the pump would be absorbed
    InfeasibleConstraints
        If no configuration can be optimized
    """
    pmf_kind = PMFKind.parse(pmf_kind)
    limit = dispersion.fc_lower_limit_nm
    if lambda_deg_nm < limit:
        raise BelowCutoff(
            f"lambda_deg = {lambda_deg_nm:g} nm is below the {dispersion.crystal.value} frequency-conversion limit "
            f"{limit:.1f} nm (pump at {3 * lambda_deg_nm / 4:g} nm, absorption edge {dispersion.cutoff_nm:g} nm)"
        )
    configs = ensure_input_is_sequence(configs)
    configs = list_configs(dispersion) if configs is None else [get_config(dispersion, c) for c in configs]

    best, candidate_eta, errors = None, {}, {}
    for config in configs:
        try:
            result = optimize_bandwidths(dispersion, lambda_deg_nm, config, pmf_kind, constraints, **optimize_kwargs)
        except PhysicsError as e:
            _log.info("Config %s at %.1f nm skipped: %s", config.id, lambda_deg_nm, e)
            errors[config.id] = f"{type(e).__name__}: {e}"
            continue
        candidate_eta[config.id] = result.eta
        if best is None or result.eta > best.eta:
            best = result

    if best is None:
        raise InfeasibleConstraints(f"No configuration could be optimized at {lambda_deg_nm:g} nm: {errors}")

    design = best.design
    return SweepResult(
        lambda_deg_nm=float(lambda_deg_nm),
        crystal=dispersion.crystal,
        pmf_kind=pmf_kind,
        config_id=best.config.id,
        bandwidths=design.bandwidths,
        report=best.report,
        spdc_poling=design.spdc_poling,
        sfc_poling=design.sfc_poling,
        output_interval=best.output_interval,
        candidate_eta=candidate_eta,
        config_errors=errors,
    )


def sweep_wavelengths(dispersion: CrystalDispersion, lambda_range_nm, step_nm: float = 10.0) -> np.ndarray:
    """
    Degeneracy wavelengths from ``lambda_range_nm[0]`` to ``lambda_range_nm[1]`` inclusive, ``step_nm`` apart.

    The range must lie inside [4/3 cutoff, 1600 nm].
    """
    low, high = _validate_interval("lambda_range_nm", lambda_range_nm)
    limit = dispersion.fc_lower_limit_nm
    if low < limit or high > SWEEP_UPPER_LIMIT_NM:
        raise OutOfRange(
            f"Sweep range [{low:g}, {high:g}] nm must lie inside [{limit:.1f}, {SWEEP_UPPER_LIMIT_NM:g}] nm for "
            f"{dispersion.crystal.value}"
        )
    if not step_nm > 0:
        raise ValueError(f"step_nm must be positive, found {step_nm}")
    n = int(np.floor((high - low) / step_nm + 1e-9)) + 1
    return low + step_nm * np.arange(n)


@dataclass
class SweepTable:
    """Results and per-point failures of a wavelength sweep, ordered by wavelength."""

    crystal: Crystal
    pmf_kind: PMFKind
    results: list[SweepResult] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    constraints: OptimizationConstraints = field(default_factory=OptimizationConstraints)

    def __post_init__(self):
        self.results.sort(key=lambda r: r.lambda_deg_nm)
        self.errors.sort(key=lambda e: e["lambda_deg_nm"])

    @property
    def n_points(self) -> int:
        return len(self.results) + len(self.errors)

    @property
    def success_fraction(self) -> float:
        return len(self.results) / self.n_points if self.n_points else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_row() for r in self.results])

    def errors_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.errors, columns=["lambda_deg_nm", "error_type", "message"])


@dataclass(frozen=True)
class _PointTask:
    crystal: Crystal
    data_file: Optional[str]
    strict_axes: bool
    temperature_c: float
    lambda_deg_nm: float
    pmf_kind: PMFKind
    constraints: OptimizationConstraints
    options: tuple
    conventional_axes: Optional[SPDCAxes]


def _run_point(task: _PointTask, dispersion: Optional[CrystalDispersion] = None):
    """Optimize one sweep point. Returns ("ok", SweepResult) or ("error", record)."""
    if dispersion is None:
        dispersion = load_crystal(task.crystal, task.data_file, task.strict_axes, task.temperature_c)
    try:
        result = select_configuration(
            dispersion, task.lambda_deg_nm, task.pmf_kind, task.constraints, **dict(task.options)
        )
    except (ValueError, ArithmeticError, linalg.LinAlgError) as e:
        _log.warning("Sweep point %.1f nm failed: %s", task.lambda_deg_nm, e)
        return "error", {"lambda_deg_nm": task.lambda_deg_nm, "error_type": type(e).__name__, "message": str(e)}

    if task.conventional_axes is not None:
        try:
            conventional = conventional_degenerate(
                dispersion, task.lambda_deg_nm, PMFKind.SINC, axes=task.conventional_axes
            )
            result = replace(result, conventional=conventional)
        except (PhysicsError, OutOfRange) as e:
            _log.debug("No conventional comparison at %.1f nm: %s", task.lambda_deg_nm, e)
    return "ok", result


def _point_key(lambda_deg_nm: float) -> float:
    return round(float(lambda_deg_nm), 6)


def read_checkpoint(path: Union[str, Path]) -> dict[float, SweepResult]:
    """Successful points recorded in a JSON-lines checkpoint, keyed by wavelength."""
    path = Path(path)
    done = {}
    if not path.exists():
        return done
    with path.open() as file:
        for line in file:
            if not line.strip():
                continue
            record = json.loads(line)
            if record.get("status") == "ok":
                result = SweepResult.from_dict(record["result"])
                done[_point_key(result.lambda_deg_nm)] = result
    return done


def _append_checkpoint(path: Optional[Path], status: str, payload) -> None:
    if path is None:
        return
    record = {"status": status, "result" if status == "ok" else "error": payload}
    with path.open("a") as file:
        file.write(json.dumps(record) + "\n")


def sweep(
    dispersion: CrystalDispersion,
    lambda_range_nm: Optional[Sequence[float]] = None,
    step_nm: float = 10.0,
    pmf_kind: Union[PMFKind, str] = PMFKind.SINC,
    constraints: Optional[OptimizationConstraints] = None,
    wavelengths: Optional[Sequence[float]] = None,
    include_conventional: bool = True,
    conventional_axes: SPDCAxes = TYPE2_DEGENERATE,
    n_jobs: int = 1,
    checkpoint: Optional[Union[str, Path]] = None,
    data_file: Optional[Union[str, Path]] = None,
    progressbar: bool = True,
    **optimize_kwargs,
) -> SweepTable:
    """
    Select the best configuration at every degeneracy wavelength of a sweep.

    A failing point is recorded in ``SweepTable.errors`` and never stops the sweep. Points are independent, so with
    ``n_jobs > 1`` they run in worker processes; results are ordered by wavelength either way.

    Parameters
    ----------
    dispersion: CrystalDispersion
        The crystal. Worker processes reload it from ``data_file``.
    lambda_range_nm: tuple of float, optional
        (first, last) degeneracy wavelength in nm. Required unless ``wavelengths`` is given.
    step_nm: float, default 10
        Wavelength step
    pmf_kind: PMFKind or str
        "sinc" or "gaussian"
    constraints: OptimizationConstraints, optional
    wavelengths: sequence of float, optional
        Explicit sweep points, overriding the range
    include_conventional: bool, default True
        Also compute the filtered degenerate sinc source as a comparison, where its pump is not absorbed
    conventional_axes: SPDCAxes
        Polarizations of the comparison source
    n_jobs: int, default 1
        Number of worker processes
    checkpoint: path, optional
        JSON-lines file. Points already recorded as successful are loaded instead of recomputed, and every new
        point is appended as soon as it finishes.
    data_file: path, optional
        Sellmeier file ``dispersion`` was read from
    progressbar: bool, default True
    **optimize_kwargs
        Passed to :func:`optimize_bandwidths`

    Returns
    -------
    SweepTable
    """
    pmf_kind = PMFKind.parse(pmf_kind)
    constraints = OptimizationConstraints() if constraints is None else constraints
    if wavelengths is None:
        if lambda_range_nm is None:
            raise ValueError("Either lambda_range_nm or wavelengths is required")
        wavelengths = sweep_wavelengths(dispersion, lambda_range_nm, step_nm)

    checkpoint = None if checkpoint is None else Path(checkpoint)
    done = {} if checkpoint is None else read_checkpoint(checkpoint)
    if done:
        _log.info("Resuming sweep: %d points loaded from %s", len(done), checkpoint)

    table = SweepTable(dispersion.crystal, pmf_kind, constraints=constraints)
    tasks = []
    for lam in wavelengths:
        key = _point_key(lam)
        if key in done:
            table.results.append(done[key])
            continue
        tasks.append(
            _PointTask(
                crystal=dispersion.crystal,
                data_file=None if data_file is None else str(data_file),
                strict_axes=dispersion.strict_axes,
                temperature_c=dispersion.temperature_c,
                lambda_deg_nm=float(lam),
                pmf_kind=pmf_kind,
                constraints=constraints,
                options=tuple(sorted(optimize_kwargs.items())),
                conventional_axes=conventional_axes if include_conventional else None,
            )
        )

    def record(status, payload):
        if status == "ok":
            table.results.append(payload)
            _append_checkpoint(checkpoint, status, payload.to_dict())
        else:
            table.errors.append(payload)
            _append_checkpoint(checkpoint, status, payload)

    if n_jobs <= 1:
        for task in progress_bar(tasks, display=progressbar):
            record(*_run_point(task, dispersion))
    else:
        bar = progress_bar(range(len(tasks)), display=progressbar)
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_run_point, task) for task in tasks]
            for i, future in enumerate(as_completed(futures)):
                record(*future.result())
                bar.update(i + 1)

    table.results.sort(key=lambda r: r.lambda_deg_nm)
    table.errors.sort(key=lambda e: e["lambda_deg_nm"])
    _log.info(
        "Sweep of %d points finished, %d succeeded (%.0f%%)",
        table.n_points, len(table.results), 100 * table.success_fraction,
    )
    return table
