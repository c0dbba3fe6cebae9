"""Python access to the debias core library."""

from ._debias import (
    ConfigError,
    Error,
    NumericError,
    SchemaError,
    ShapeError,
    auc,
    compare,
    disparity,
    gdro_weight_update,
    generate,
    plot_data,
    run,
    run_cell,
    som_fit,
    som_purity,
    subgroup_accuracy,
)

__all__ = [
    "ConfigError",
    "Error",
    "NumericError",
    "SchemaError",
    "ShapeError",
    "auc",
    "compare",
    "disparity",
    "gdro_weight_update",
    "generate",
    "plot_data",
    "run",
    "run_cell",
    "som_fit",
    "som_purity",
    "subgroup_accuracy",
]
