"""Variance-reduced Langevin optimization and its delayed-diffusion twin.

Submodules are imported lazily so the CLI can configure BLAS thread pools
before numpy loads.
"""

from importlib import import_module

from ._version import __version__

_EXPORTS = {
    "SymMatrix": "linalg",
    "SpectralDecomposition": "linalg",
    "eig_sym": "linalg",
    "psd_sqrt": "linalg",
    "directional_derivative": "linalg",
    "ObjectiveModel": "models",
    "QuadraticAlternateModel": "models",
    "LogisticModel": "models",
    "DiffusionSpec": "models",
    "generate_quadratic_model": "models",
    "generate_logistic_model": "models",
    "sigma": "models",
    "q_factor": "models",
    "minimizer": "models",
    "save_model": "models",
    "load_model": "models",
    "RunConfig": "algorithm",
    "svrgld_step": "algorithm",
    "run_svrgld": "algorithm",
    "SddeConfig": "sdde",
    "run_sdde_em": "sdde",
    "run_jacobian_flow": "sdde",
    "semigroup_gradient": "sdde",
    "EpochPath": "paths",
    "PathEnsemble": "paths",
    "JacobianEnsemble": "paths",
    "EmpiricalMeasure": "metrics",
    "w1_exact_1d": "metrics",
    "sliced_w1": "metrics",
    "moment": "metrics",
    "coupled_distance": "metrics",
    "estimate_smoothness": "verify",
    "estimate_dissipativity": "verify",
    "check_assumption4": "verify",
    "check_sqrt_derivative_lemma": "verify",
    "check_concentration": "verify",
    "assumption_report": "verify",
    "theorem_eta_ceiling": "verify",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name: str):
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
