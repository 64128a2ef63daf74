from fcspdc_modeling.base.primitives import (
    Axis,
    BandwidthSet,
    Crystal,
    FrequencyRelations,
    PMFKind,
    PolingSpec,
    TophatFilter,
)
from fcspdc_modeling.dispersion import load_crystal, solve_poling_period
from fcspdc_modeling.metrics import (
    MetricsReport,
    evaluate_output,
    indistinguishability,
    minimal_filter_for_purity,
    purity,
    schmidt_decompose,
)
from fcspdc_modeling.optimizer import (
    OptimizationConstraints,
    conventional_degenerate,
    optimize_bandwidths,
    select_configuration,
    sweep,
)
from fcspdc_modeling.phasematch import get_config, list_configs, trace_gvm_curves
from fcspdc_modeling.spectra import GaussianSurrogate, JointAmplitude, SpectralGrid, build_amplitudes

__all__ = [
    "Axis",
    "BandwidthSet",
    "Crystal",
    "FrequencyRelations",
    "PMFKind",
    "PolingSpec",
    "TophatFilter",
    "load_crystal",
    "solve_poling_period",
    "get_config",
    "list_configs",
    "trace_gvm_curves",
    "SpectralGrid",
    "JointAmplitude",
    "GaussianSurrogate",
    "build_amplitudes",
    "MetricsReport",
    "schmidt_decompose",
    "purity",
    "indistinguishability",
    "minimal_filter_for_purity",
    "evaluate_output",
    "OptimizationConstraints",
    "optimize_bandwidths",
    "select_configuration",
    "conventional_degenerate",
    "sweep",
]
