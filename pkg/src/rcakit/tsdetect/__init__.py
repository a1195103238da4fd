"""Metric anomaly detection by robust decomposition and statistical tests."""

from .decompose import DecompositionResult, decompose, l1_trend
from .detector import (
    KINDS,
    LONG_TREND,
    MEAN_CHANGE,
    ROUTING,
    SPIKE_DIP,
    VARIANCE_CHANGE,
    AnomalyReport,
    DetectionConfig,
    SeriesDetector,
    detect_anomalies,
    detect_windows,
)
from .period import detect_period
from .stattests import test_long_trend, test_mean_change, test_spikes_dips, test_variance_change
from .window import RobustWindow, update_window

__all__ = [
    "AnomalyReport",
    "DecompositionResult",
    "DetectionConfig",
    "KINDS",
    "LONG_TREND",
    "MEAN_CHANGE",
    "ROUTING",
    "RobustWindow",
    "SPIKE_DIP",
    "SeriesDetector",
    "VARIANCE_CHANGE",
    "decompose",
    "detect_anomalies",
    "detect_period",
    "detect_windows",
    "l1_trend",
    "test_long_trend",
    "test_mean_change",
    "test_spikes_dips",
    "test_variance_change",
    "update_window",
]
