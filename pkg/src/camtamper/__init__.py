"""Residual-based camera tamper analysis.

Ten image residual features, ARIMA modelling of their time series, synthetic
tampering and detector evaluation.
"""
__version__ = "0.1.0"

from .features import FEATURE_IDS, FeatureConfig, extract_residuals, init_state, process_frame
from .frames import load_frame, open_sequence
from .synth import TamperEvent, TamperSchedule, make_schedule, synthesize, toy_scene
from .tsa import ArimaFit, ArimaOrder, fit_arima, select_order

__all__ = [
    "FEATURE_IDS",
    "FeatureConfig",
    "extract_residuals",
    "init_state",
    "process_frame",
    "load_frame",
    "open_sequence",
    "TamperEvent",
    "TamperSchedule",
    "make_schedule",
    "synthesize",
    "toy_scene",
    "ArimaFit",
    "ArimaOrder",
    "fit_arima",
    "select_order",
]
