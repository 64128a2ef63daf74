"""
Command-line interface: ``fcspdc configs | gvm | analyze | sweep``.

Exit codes are 0 on success, 2 for invalid input, 3 when the physics has no solution and 4 for a sweep in which too
few points succeeded.
"""

import functools
import logging
import sys
import tomllib
import warnings
from dataclasses import asdict, dataclass, fields, replace
from importlib import metadata
from pathlib import Path
from typing import Optional

import click
import numpy as np
import pandas as pd
import scipy

from fcspdc_modeling.base.primitives import Axis, Crystal, PMFKind
from fcspdc_modeling.dispersion import CrystalDispersion, load_crystal
from fcspdc_modeling.errors import (
    PARTIAL_SWEEP_EXIT_CODE,
    InputError,
    InvalidConfiguration,
    PhysicsError,
)
from fcspdc_modeling.optimizer import (
    OptimizationConstraints,
    SweepResult,
    select_configuration,
    sweep,
)
from fcspdc_modeling.phasematch import get_config, gvm_frame, list_configs, trace_gvm_curves, type2_axes
from fcspdc_modeling.spectra import SourceDesign, build_amplitudes
from fcspdc_modeling.tools.output_tools import (
    configs_table,
    dump_amplitude,
    metrics_table,
    write_figure_pack,
    write_frame,
    write_sidecar,
)

_log = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass(frozen=True)
class RunConfig:
    """
    Settings of one CLI run, read from a TOML file and overridden by command-line flags.

    Every key of the TOML file must be a field of this class.
    """

    crystal: str = "ktp"
    pmf_kind: str = "sinc"
    grid_points: int = 512
    search_points: int = 96
    lambda_min_nm: Optional[float] = None
    lambda_max_nm: float = 1600.0
    lambda_step_nm: float = 10.0
    target_output_bandwidth: Optional[float] = None
    ratio_limit: float = 2.0
    normalized_bounds: tuple[float, float] = (0.1, 6.0)
    pulse_duration_fs: tuple[float, float] = (5.0, 1e6)
    region_length_mm: tuple[float, float] = (1.0, 30.0)
    out_dir: str = "results"
    seed: int = 0
    n_starts: int = 5
    n_jobs: int = 1
    fast_axis: str = "y"
    slow_axis: str = "z"
    success_threshold: float = 0.9
    sellmeier_file: Optional[str] = None
    temperature_c: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "crystal", Crystal.parse(self.crystal).value)
        object.__setattr__(self, "pmf_kind", PMFKind.parse(self.pmf_kind).value)
        for name in ("fast_axis", "slow_axis"):
            object.__setattr__(self, name, Axis.parse(getattr(self, name)).value)
        for name in ("normalized_bounds", "pulse_duration_fs", "region_length_mm"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))

        if self.grid_points < 64 or self.search_points < 64:
            raise InvalidConfiguration(
                f"grid_points and search_points must be at least 64, found {self.grid_points} and "
                f"{self.search_points}"
            )
        if self.n_starts < 1 or self.n_jobs < 1:
            raise InvalidConfiguration("n_starts and n_jobs must be at least 1")
        if not 0 <= self.success_threshold <= 1:
            raise InvalidConfiguration(f"success_threshold must lie in [0, 1], found {self.success_threshold}")
        if self.lambda_step_nm <= 0:
            raise InvalidConfiguration(f"lambda_step_nm must be positive, found {self.lambda_step_nm}")
        if self.target_output_bandwidth is not None and self.target_output_bandwidth <= 0:
            raise InvalidConfiguration("target_output_bandwidth must be positive")
        self.constraints()
        type2_axes(self.fast_axis, self.slow_axis)

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        with open(path, "rb") as file:
            data = tomllib.load(file)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfiguration(f"Unknown run configuration keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise InvalidConfiguration(f"Invalid run configuration: {e}") from e

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with every override that is not None applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def constraints(self) -> OptimizationConstraints:
        try:
            return OptimizationConstraints(
                ratio_limit=self.ratio_limit,
                normalized_bounds=self.normalized_bounds,
                pulse_duration_fs=self.pulse_duration_fs,
                region_length_mm=self.region_length_mm,
            )
        except ValueError as e:
            raise InvalidConfiguration(str(e)) from e

    def dispersion(self) -> CrystalDispersion:
        return load_crystal(self.crystal, self.sellmeier_file, temperature_c=self.temperature_c)

    def optimize_options(self) -> dict:
        return {
            "target_output_bandwidth": self.target_output_bandwidth,
            "n_starts": self.n_starts,
            "seed": self.seed,
            "search_points": self.search_points,
            "grid_points": self.grid_points,
        }

    def to_dict(self):
        return asdict(self)


def _versions(dispersion: CrystalDispersion) -> dict:
    try:
        package = metadata.version("fcspdc_modeling")
    except metadata.PackageNotFoundError:
        package = "unknown"
    return {
        "fcspdc_modeling": package,
        "sellmeier_data": dispersion.data_version,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def handle_errors(f):
    """Report library errors on stderr and exit with their code instead of a traceback."""

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (InputError, PhysicsError) as e:
            click.echo(f"{type(e).__name__}: {e}", err=True)
            sys.exit(e.exit_code)
        except ValueError as e:
            click.echo(f"{type(e).__name__}: {e}", err=True)
            sys.exit(InputError.exit_code)

    return wrapper


def common_options(f):
    """Options accepted both before and after the subcommand name."""
    options = [
        click.option("--crystal", type=click.Choice([c.value for c in Crystal], case_sensitive=False),
                     default=None, help="Nonlinear crystal."),
        click.option("--pmf", "pmf_kind", type=click.Choice([k.value for k in PMFKind], case_sensitive=False),
                     default=None, help="Phase-matching function shape."),
        click.option("--grid-points", type=int, default=None, help="Grid points per axis."),
        click.option("--seed", type=int, default=None, help="Seed of the optimizer starts."),
        click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Output directory."),
        click.option("--config-file", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="TOML run configuration."),
        click.option("--n-jobs", type=int, default=None, help="Worker processes for sweeps."),
        click.option("--target-bandwidth", "target_output_bandwidth", type=float, default=None,
                     help="Target output bandwidth in rad/fs."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _run_config(ctx: click.Context, local: dict) -> RunConfig:
    """Merge the TOML file, the group options and the subcommand options, later ones winning."""
    merged = dict(ctx.obj or {})
    merged.update({k: v for k, v in local.items() if v is not None})
    config_file = merged.pop("config_file", None)
    rc = RunConfig.from_toml(config_file) if config_file is not None else RunConfig()
    return rc.with_overrides(**merged)


@click.group()
@common_options
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default="WARNING",
              help="Logging verbosity.")
@click.pass_context
def cli(ctx, log_level, **options):
    """Design and evaluate frequency-converted photon-pair sources."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()), format="%(asctime)s %(name)s %(levelname)s: %(message)s"
    )
    logging.captureWarnings(True)
    ctx.obj = {k: v for k, v in options.items() if v is not None}


@cli.command()
@common_options
@click.pass_context
@handle_errors
def configs(ctx, **options):
    """Print the phase-matching configurations admissible in a crystal."""
    rc = _run_config(ctx, options)
    click.echo(configs_table(list_configs(rc.crystal), rc.crystal))


@cli.command()
@common_options
@click.option("--lambda-min", type=float, default=700.0, show_default=True, help="Shortest wavelength in nm.")
@click.option("--lambda-max", type=float, default=3000.0, show_default=True, help="Longest wavelength in nm.")
@click.option("--step", type=float, default=5.0, show_default=True, help="Scan step in nm.")
@click.pass_context
@handle_errors
def gvm(ctx, lambda_min, lambda_max, step, **options):
    """Trace the group-velocity-matching loci of type-2 SPDC and write them as CSV."""
    rc = _run_config(ctx, options)
    dispersion = rc.dispersion()
    loci = trace_gvm_curves(
        dispersion, type2_axes(rc.fast_axis, rc.slow_axis), (lambda_min, lambda_max), step_nm=step
    )
    if all(locus.is_empty for locus in loci.values()):
        warnings.warn(f"No group-velocity-matching solutions in [{lambda_min:g}, {lambda_max:g}] nm")

    path = write_frame(gvm_frame(loci), Path(rc.out_dir) / f"gvm_{rc.crystal}.csv")
    for condition, locus in loci.items():
        crossings = ", ".join(f"{c:.1f}" for c in locus.degeneracy_nm) or "none"
        click.echo(f"{condition}: {len(locus.lambda_s_nm)} points, degenerate at {crossings} nm")
    click.echo(f"Wrote {path}")


def _design_of(result: SweepResult, dispersion: CrystalDispersion) -> SourceDesign:
    return SourceDesign(
        result.lambda_deg_nm,
        get_config(dispersion, result.config_id),
        result.pmf_kind,
        result.bandwidths,
        result.spdc_poling,
        result.sfc_poling,
    )


@cli.command()
@common_options
@click.option("--lambda-deg", type=float, required=True, help="Degeneracy (output) wavelength in nm.")
@click.option("--config", "config_id", type=str, default=None, help="Force a configuration, e.g. II.")
@click.option("--dump-jsa", is_flag=True, help="Also write the JSA, JCA and effective JSA.")
@click.option("--dump-format", type=click.Choice(["csv", "npy"]), default="csv", show_default=True)
@click.pass_context
@handle_errors
def analyze(ctx, lambda_deg, config_id, dump_jsa, dump_format, **options):
    """Optimize a source at one output wavelength and report its figures of merit."""
    rc = _run_config(ctx, options)
    dispersion = rc.dispersion()
    configs = None if config_id is None else [config_id]
    result = select_configuration(
        dispersion, lambda_deg, rc.pmf_kind, rc.constraints(), configs=configs, **rc.optimize_options()
    )

    stem = Path(rc.out_dir) / f"analyze_{rc.crystal}_{rc.pmf_kind}_{lambda_deg:g}nm"
    payload = {
        "versions": _versions(dispersion),
        "run_config": rc.to_dict(),
        "constraints": rc.constraints().to_dict(),
        "result": result.to_dict(),
    }
    path = write_sidecar(Path(f"{stem}.json"), payload)

    click.echo(f"{rc.crystal.upper()} at {lambda_deg:g} nm ({rc.pmf_kind}): configuration {result.config_id}")
    click.echo(metrics_table(result.report))
    click.echo(f"Wrote {path}")

    if dump_jsa:
        amplitudes = build_amplitudes(dispersion, _design_of(result, dispersion), points=rc.grid_points)
        for name, f in (("jsa", amplitudes.jsa), ("jca", amplitudes.jca), ("effective", amplitudes.effective)):
            for written in dump_amplitude(f, Path(f"{stem}_{name}.{dump_format}")):
                click.echo(f"Wrote {written}")


@cli.command(name="sweep")
@common_options
@click.option("--lambda-min", type=float, default=None, help="First wavelength in nm (default: FC limit).")
@click.option("--lambda-max", type=float, default=None, help="Last wavelength in nm.")
@click.option("--step", type=float, default=None, help="Wavelength step in nm.")
@click.option("--no-conventional", is_flag=True, help="Skip the degenerate-SPDC comparison.")
@click.option("--no-progress", is_flag=True, help="Hide the progress bar.")
@click.pass_context
@handle_errors
def sweep_command(ctx, lambda_min, lambda_max, step, no_conventional, no_progress, **options):
    """Select the best source over a range of output wavelengths and write the figure pack."""
    rc = _run_config(ctx, options).with_overrides(
        lambda_min_nm=lambda_min, lambda_max_nm=lambda_max, lambda_step_nm=step
    )
    dispersion = rc.dispersion()
    low = rc.lambda_min_nm if rc.lambda_min_nm is not None else np.ceil(dispersion.fc_lower_limit_nm)
    out_dir = Path(rc.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = out_dir / f"sweep_{rc.crystal}_{rc.pmf_kind}"

    table = sweep(
        dispersion,
        (low, rc.lambda_max_nm),
        rc.lambda_step_nm,
        rc.pmf_kind,
        rc.constraints(),
        include_conventional=not no_conventional,
        conventional_axes=type2_axes(rc.fast_axis, rc.slow_axis),
        n_jobs=rc.n_jobs,
        checkpoint=stem.with_suffix(".jsonl"),
        data_file=rc.sellmeier_file,
        progressbar=not no_progress,
        **rc.optimize_options(),
    )

    df = table.to_frame()
    write_frame(df, stem.with_suffix(".csv"))
    panels = write_figure_pack(df, out_dir, rc.crystal, rc.pmf_kind)
    write_sidecar(
        stem.with_suffix(".json"),
        {
            "versions": _versions(dispersion),
            "run_config": rc.to_dict(),
            "constraints": rc.constraints().to_dict(),
            "n_points": table.n_points,
            "success_fraction": table.success_fraction,
            "errors": table.errors,
        },
    )
    click.echo(
        f"{len(table.results)}/{table.n_points} points succeeded, wrote {stem.with_suffix('.csv')} and "
        f"{len(panels)} figure panels"
    )
    if table.success_fraction < rc.success_threshold:
        click.echo(
            f"Success fraction {table.success_fraction:.2f} is below the threshold {rc.success_threshold:.2f}",
            err=True,
        )
        sys.exit(PARTIAL_SWEEP_EXIT_CODE)
