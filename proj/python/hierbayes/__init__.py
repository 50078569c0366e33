"""Hierarchical Bayesian location/scale and regression models.

Thin wrapper over the compiled extension: fit models, generate synthetic
data, rank fits by WAIC, and render report CSVs. All heavy lifting happens
in C++; every operation works on files and directories so results stay
reproducible from (data, manifest) alone.
"""

try:
    from ._hierbayes import (
        ConfigError,
        ConvergenceError,
        DataError,
        SchemaError,
        __version__,
        compare,
        estimate,
        fit,
        known_model_tags,
        moment_estimates,
        report,
        simulate,
    )
except ImportError:  # in-tree test runs keep the module outside the package
    from _hierbayes import (
        ConfigError,
        ConvergenceError,
        DataError,
        SchemaError,
        __version__,
        compare,
        estimate,
        fit,
        known_model_tags,
        moment_estimates,
        report,
        simulate,
    )

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "SchemaError",
    "__version__",
    "compare",
    "estimate",
    "fit",
    "known_model_tags",
    "moment_estimates",
    "report",
    "simulate",
]
