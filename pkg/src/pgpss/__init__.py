"""Parallel GPSS simulator with optimistic logical processes."""

from __future__ import annotations

from pgpss.model import BlockRef, BlockSpec, ModelSpec, ParseError, PartitionSpec, parse_model, render_model

__all__ = [
    "BlockRef",
    "BlockSpec",
    "ModelSpec",
    "ParseError",
    "PartitionSpec",
    "parse_model",
    "render_model",
]

__version__ = "0.1.0"
