# Copyright 2026 The newton-forge Authors
# SPDX-License-Identifier: Apache-2.0
"""Matrix-free Newton-CG, SGD and Adam for feed-forward networks."""

from ._core import (
    AdamConfig,
    AdamState,
    ConfigError,
    DataError,
    DimensionError,
    Error,
    Network,
    NewtonCGConfig,
    NonFiniteError,
    accuracy,
    adam_step,
    benchmark,
    cg_solve,
    check,
    epoch_order,
    format_efficiency,
    format_scaling_table,
    gradient,
    hvp,
    init_weights,
    load_csv,
    load_model,
    loss,
    newton_cg_step,
    parallel_efficiency,
    parse_arch,
    predict,
    save_model,
    sgd_step,
    synth_classification,
    synth_regression,
    train,
)

__version__ = "0.1.0"
