"""Hierarchical logger names used across the simulator."""

from __future__ import annotations

import logging

ROOT = "parallelJavaGpssSimulator"

GPSS = f"{ROOT}.gpss"
GPSS_FACILITY = f"{GPSS}.facility"
GPSS_QUEUE = f"{GPSS}.queue"
GPSS_STORAGE = f"{GPSS}.storage"

LP = f"{ROOT}.lp"
LP_COMMIT = f"{LP}.commit"
LP_ROLLBACK = f"{LP}.rollback"
LP_MEMORY = f"{LP}.memory"
LP_STATS = f"{LP}.stats"
LP_LPCC = f"{LP}.lpcc"
LP_LPCC_STATESPACE = f"{LP_LPCC}.statespace"

SIMULATION = f"{ROOT}.simulation"
SIMULATION_GVT = f"{SIMULATION}.gvt"
SIMULATION_REPORT = f"{SIMULATION}.report"
SIMULATION_REPORT_BLOCK = f"{SIMULATION_REPORT}.block"
SIMULATION_REPORT_SUMMARY = f"{SIMULATION_REPORT}.summary"
SIMULATION_REPORT_CHAIN = f"{SIMULATION_REPORT}.chain"

ALL_LOGGERS = (
    ROOT,
    GPSS,
    GPSS_FACILITY,
    GPSS_QUEUE,
    GPSS_STORAGE,
    LP,
    LP_COMMIT,
    LP_ROLLBACK,
    LP_MEMORY,
    LP_STATS,
    LP_LPCC,
    LP_LPCC_STATESPACE,
    SIMULATION,
    SIMULATION_GVT,
    SIMULATION_REPORT,
    SIMULATION_REPORT_BLOCK,
    SIMULATION_REPORT_SUMMARY,
    SIMULATION_REPORT_CHAIN,
)


def get(name: str) -> logging.Logger:
    return logging.getLogger(name)
