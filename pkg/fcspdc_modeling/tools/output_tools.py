import json
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from texttable import Texttable

from fcspdc_modeling.base.primitives import AmplitudeKind, Crystal, PMFKind
from fcspdc_modeling.base.utilities import omega_to_wavelength
from fcspdc_modeling.metrics import MetricsReport
from fcspdc_modeling.phasematch import PhaseMatchConfig
from fcspdc_modeling.spectra import JointAmplitude, SpectralGrid

_log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"

# Sweep columns written to each panel file, keyed by panel letter
METRIC_PANELS = {
    "a": ["config", "purity", "conventional_unfiltered_purity"],
    "b": ["indistinguishability"],
    "c": ["heralding_efficiency", "conventional_heralding_efficiency"],
}
DESIGN_PANELS = [
    ["config", "sigma_p_norm", "sigma_phi_norm", "sigma_e_norm", "sigma_psi_norm"],
    ["sigma_out_min_rad_per_fs", "sigma_out_max_rad_per_fs", "output_bandwidth_rad_per_fs"],
    [
        "config", "period_spdc_um", "direction_spdc", "length_spdc_mm", "period_sfc_um", "direction_sfc",
        "length_sfc_mm",
    ],
]
REDUCED_RANGE_COLUMNS = ["config", "purity"]
EFFICIENCY_COLUMNS = ["conversion_efficiency", "conventional_pair_pass_probability"]

# Lowest purity kept in the reduced-range panel
REDUCED_RANGE_FLOOR = 0.9

SWEEP_FIGURE = {Crystal.KTP: 6, Crystal.LN: 7, Crystal.MGLN: 7}
GAUSSIAN_DETAIL_FIGURE = {Crystal.KTP: 8, Crystal.LN: 9, Crystal.MGLN: 9}
REDUCED_RANGE_PANEL = {Crystal.KTP: "fig10a", Crystal.LN: "fig10b", Crystal.MGLN: "fig10b"}
EFFICIENCY_PANEL = {
    (Crystal.KTP, PMFKind.SINC): "fig11a",
    (Crystal.KTP, PMFKind.GAUSSIAN): "fig11b",
    (Crystal.LN, PMFKind.SINC): "fig11c",
    (Crystal.LN, PMFKind.GAUSSIAN): "fig11d",
    (Crystal.MGLN, PMFKind.SINC): "fig11c",
    (Crystal.MGLN, PMFKind.GAUSSIAN): "fig11d",
}

def configs_table(configs: list[PhaseMatchConfig], crystal: Union[Crystal, str]) -> str:
    """Render a configuration catalog as a text table."""
    table = Texttable(max_width=0)
    table.set_deco(Texttable.HEADER)
    table.set_cols_align(["c", "l", "l"])
    table.set_cols_dtype(["t", "t", "t"])
    rows = [["Config", "SPDC (p -> i + s)", "SFC (e + i -> FC)"]]
    rows += [[config.id, *config.describe()] for config in configs]
    table.add_rows(rows)
    return f"Phase-matching configurations for {Crystal.parse(crystal).value.upper()}\n" + table.draw()

def metrics_table(report: MetricsReport) -> str:
    """Render the scalar figures of merit of a report as a two-column text table."""
    table = Texttable(max_width=0)
    table.set_deco(Texttable.HEADER | Texttable.VLINES)
    table.set_cols_align(["l", "r"])
    table.set_cols_dtype(["t", "t"])
    rows = [["Metric", "Value"]]
    for name, value in report.to_dict().items():
        if isinstance(value, (dict, list)) or value is None:
            continue
        rows.append([name, f"{value:.6g}" if isinstance(value, float) else str(value)])
    table.add_rows(rows)
    return table.draw()

def amplitude_frame(f: JointAmplitude) -> pd.DataFrame:
    """Long-format table of an amplitude, one row per grid point."""
    w1, w2 = f.grid.mesh()
    return pd.DataFrame(
        {
            "omega_1_rad_per_fs": w1.ravel(),
            "omega_2_rad_per_fs": w2.ravel(),
            "lambda_1_nm": omega_to_wavelength(w1.ravel()),
            "lambda_2_nm": omega_to_wavelength(w2.ravel()),
            "real": f.values.real.ravel(),
            "imag": f.values.imag.ravel(),
        }
    )

def dump_amplitude(f: JointAmplitude, path: Union[str, Path]) -> list[Path]:
    """
    Write an amplitude to disk.

    A ``.csv`` path gets the long-format table of :func:`amplitude_frame`. Any other suffix is replaced by ``.npy``
    for the complex matrix, with a ``.json`` header holding the grid, kind and normalization next to it.

    Returns
    -------
    paths: list of Path
        Files written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".csv":
        amplitude_frame(f).to_csv(path, index=False, float_format="%.17g")
        header = path.with_suffix(".json")
        header.write_text(json.dumps(f.to_dict(), indent=2))
        return [path, header]

    matrix = path.with_suffix(".npy")
    header = path.with_suffix(".json")
    np.save(matrix, f.values)
    header.write_text(json.dumps(f.to_dict(), indent=2))
    return [matrix, header]

def load_amplitude(path: Union[str, Path]) -> JointAmplitude:
    """Read an amplitude written by :func:`dump_amplitude`, from either of its files."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    grid = SpectralGrid.from_dict(header["grid"])
    if path.suffix == ".csv":
        df = pd.read_csv(path)
        values = (df["real"].to_numpy() + 1j * df["imag"].to_numpy()).reshape(grid.shape)
    else:
        values = np.load(path.with_suffix(".npy"))
    return JointAmplitude(grid, values, AmplitudeKind.parse(header["kind"]), header["normalization"])

def _write_panel(frame: pd.DataFrame, path: Path) -> None:
    """Write a panel, merging with an existing file on lambda_deg_nm so that sweeps of both PMF kinds combine."""
    if path.exists():
        old = pd.read_csv(path)
        keep = ["lambda_deg_nm"] + [c for c in old.columns if c not in frame.columns]
        frame = old[keep].merge(frame, on="lambda_deg_nm", how="outer")
        values = [c for c in frame.columns if c != "lambda_deg_nm"]
        if values:
            # Rows left empty once a kind is replaced
            frame = frame.dropna(subset=values, how="all")
    frame.sort_values("lambda_deg_nm").to_csv(path, index=False, float_format=FLOAT_FORMAT)

def _panel(df: pd.DataFrame, columns: list[str], suffix: str) -> pd.DataFrame:
    present = [c for c in columns if c in df.columns]
    out = df[["lambda_deg_nm", *present]].copy()
    return out.rename(columns={c: f"{c}_{suffix}" for c in present})

def figure_panels(df: pd.DataFrame, crystal: Union[Crystal, str], pmf_kind: Union[PMFKind, str]) -> dict:
    """
    Split a sweep table into per-panel frames keyed by figure label.

    Every sweep fills ``fig6a``-``fig6c`` (KTP) or ``fig7a``-``fig7c`` (LN, MgLN) with purity,
    indistinguishability and heralding efficiency. The design panels (normalized bandwidths, output interval,
    poling) go to ``fig6d``-``fig6f`` / ``fig7d``-``fig7f`` for sinc sweeps and to ``fig8a``-``fig8c`` /
    ``fig9a``-``fig9c`` for Gaussian sweeps. ``fig10a`` / ``fig10b`` hold the purity of the rows at or above
    :data:`REDUCED_RANGE_FLOOR`, and ``fig11a``-``fig11d`` the conversion efficiency against the conventional
    pair pass probability.

    Every column except ``lambda_deg_nm`` carries the PMF kind as suffix, so sinc and Gaussian sweeps of one
    crystal share a file.
    """
    crystal, pmf_kind = Crystal.parse(crystal), PMFKind.parse(pmf_kind)
    kind = pmf_kind.value
    sweep = f"fig{SWEEP_FIGURE[crystal]}"
    if pmf_kind == PMFKind.SINC:
        design, letters = sweep, "def"
    else:
        design, letters = f"fig{GAUSSIAN_DETAIL_FIGURE[crystal]}", "abc"

    panels = {f"{sweep}{letter}": _panel(df, columns, kind) for letter, columns in METRIC_PANELS.items()}
    for letter, columns in zip(letters, DESIGN_PANELS):
        panels[f"{design}{letter}"] = _panel(df, columns, kind)

    reduced = df[df["purity"] >= REDUCED_RANGE_FLOOR] if "purity" in df.columns else df.iloc[:0]
    panels[REDUCED_RANGE_PANEL[crystal]] = _panel(reduced, REDUCED_RANGE_COLUMNS, kind)
    panels[EFFICIENCY_PANEL[(crystal, pmf_kind)]] = _panel(df, EFFICIENCY_COLUMNS, kind)
    return panels


def write_figure_pack(
    df: pd.DataFrame, out_dir: Union[str, Path], crystal: Union[Crystal, str], pmf_kind: Union[PMFKind, str]
) -> list[Path]:
    """Write the per-panel CSVs of a sweep into ``out_dir`` and return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if df.empty:
        _log.warning("Empty sweep table, no figure panels written")
        return paths
    for name, frame in figure_panels(df, crystal, pmf_kind).items():
        path = out_dir / f"{name}.csv"
        _write_panel(frame, path)
        paths.append(path)
    return paths

def write_sidecar(path: Union[str, Path], payload: dict) -> Path:
    """Write a JSON sidecar with sorted keys, so identical runs give identical files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path

def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")

def write_frame(df: pd.DataFrame, path: Union[str, Path], columns: Optional[list[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, columns=columns)
    return path
