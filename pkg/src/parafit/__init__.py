"""parafit: parallel maximum-likelihood fitting with composable densities.

Build Variables, load events into column-major datasets, compose density
nodes, and hand the model plus data to a FitManager. Evaluation runs over a
serial or thread-pool backend with bitwise worker-count-independent
reductions; normalization integrals are cached on parameter generations.
"""

from .core import (
    BinnedDataSet,
    ParameterRegistry,
    ParameterSnapshot,
    UnbinnedDataSet,
    Variable,
    set_value,
    snapshot,
)
from .dalitz import (
    DalitzPoint,
    DecayChannel,
    IntegralCache,
    ResonanceTerm,
    compute_integrals,
    dalitz_norm,
    dalitz_pdf,
    in_boundary,
    load_dalitz_model,
    resonance_amplitude,
    total_intensity,
)
from .dataio import load_events_csv, write_events_csv
from .engine import Backend, NormalizationStore, binned_nll, cached_norm, nll, resolve_norms
from .errors import ParafitError
from .fitting import (
    FcnHandle,
    FitManager,
    FitResult,
    MinimizerOptions,
    fit_manager_run,
    hesse,
    minimize,
)
from .mcgen import GenSpec, generate_1d, generate_dalitz
from .pdf import (
    NormalizationValue,
    PdfNode,
    add_pdf,
    eval_batch,
    exponential,
    gaussian,
    normalize,
    polynomial,
    prod_pdf,
)
from .sharding import PartialSum, Shard, partial_nll, reduce_partials, shard, sharded_nll

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BinnedDataSet",
    "DalitzPoint",
    "DecayChannel",
    "FcnHandle",
    "FitManager",
    "FitResult",
    "GenSpec",
    "IntegralCache",
    "MinimizerOptions",
    "NormalizationStore",
    "NormalizationValue",
    "ParafitError",
    "ParameterRegistry",
    "ParameterSnapshot",
    "PartialSum",
    "PdfNode",
    "ResonanceTerm",
    "Shard",
    "UnbinnedDataSet",
    "Variable",
    "add_pdf",
    "binned_nll",
    "cached_norm",
    "compute_integrals",
    "dalitz_norm",
    "dalitz_pdf",
    "eval_batch",
    "exponential",
    "fit_manager_run",
    "gaussian",
    "generate_1d",
    "generate_dalitz",
    "hesse",
    "in_boundary",
    "load_dalitz_model",
    "load_events_csv",
    "minimize",
    "nll",
    "normalize",
    "partial_nll",
    "polynomial",
    "prod_pdf",
    "reduce_partials",
    "resolve_norms",
    "resonance_amplitude",
    "set_value",
    "shard",
    "sharded_nll",
    "snapshot",
    "total_intensity",
    "write_events_csv",
]
