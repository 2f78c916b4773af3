"""Carnot-Caratheodory distances, BV calculus on grids and a constructive
compactness engine for sequences of functions under varying metrics.

Submodules are imported on first attribute access so that the command
line can cap thread pools before numerical libraries load.
"""
from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "VectorFieldFamily": "vector_fields", "PolynomialFamily": "vector_fields",
    "euclidean": "vector_fields", "heisenberg": "vector_fields", "step2": "vector_fields",
    "commutator": "vector_fields", "hormander_rank": "vector_fields",
    "builtin_sequence": "vector_fields", "family_from_spec": "vector_fields",
    "sequence_from_spec": "vector_fields",
    "Control": "flows", "integrate": "flows", "escape_check": "flows",
    "flow_deviation": "flows", "gronwall_bound": "flows",
    "build_graph": "lattice", "LatticeGraph": "lattice",
    "CCMetricEstimate": "cc_metric", "distance_graph": "cc_metric",
    "distance_control_opt": "cc_metric", "metric_deviation": "cc_metric",
    "SampledCompact": "sampled_space", "SpaceSequence": "sampled_space",
    "five_r_covering": "sampled_space", "doubling_estimate": "sampled_space",
    "GridFunction": "bv_grid", "total_variation": "bv_grid", "x_gradient": "bv_grid",
    "poincare_quotient": "bv_grid", "adjoint_pairing": "bv_grid",
    "semicontinuity_check": "bv_grid",
    "EngineConfig": "engine", "run_engine": "engine", "hypothesis_audit": "engine",
    "cauchy_modulus": "engine",
}

__all__ = ["__version__", *_EXPORTS]


def __getattr__(name):
    mod = _EXPORTS.get(name)
    if mod is None:
        raise AttributeError(f"module 'cccompact' has no attribute {name!r}")
    return getattr(import_module(f".{mod}", __name__), name)
