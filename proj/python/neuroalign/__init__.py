# Copyright (c) 2026, The neuroalign authors
# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the neuroalign C++ core."""

from ._core import (
    ConfigError,
    NeuroalignError,
    __version__,
    canonical_config,
    config_hash,
    fovea_mask,
    pixcorr,
    read_pnm,
    ssim,
    synth,
    topk_retrieval,
    train,
    validate_report,
    write_pnm,
)

__all__ = [
    "ConfigError",
    "NeuroalignError",
    "__version__",
    "canonical_config",
    "config_hash",
    "fovea_mask",
    "pixcorr",
    "read_pnm",
    "ssim",
    "synth",
    "topk_retrieval",
    "train",
    "validate_report",
    "write_pnm",
]
