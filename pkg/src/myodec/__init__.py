"""Streaming EMG movement regression: TD5 features, TCN/LSTM/SVR decoders,
metrics, a synthetic subject, experiment protocols and bit-exact storage."""
from __future__ import annotations

from .config import RunConfig, config_load, config_loads
from .errors import MyodecError, ValidationError
from .kinematics import CalibrationMap, calibrate
from .metrics import MetricsReport, evaluate, kruskal_wallis, response_delay, rmse_angular
from .models import LstmRegressor, SvrRegressor, TcnRegressor, create_model
from .session import SessionLog
from .signal import StreamingExtractor, td5

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "config_load", "config_loads", "MyodecError", "ValidationError",
    "CalibrationMap", "calibrate", "MetricsReport", "evaluate", "kruskal_wallis",
    "response_delay", "rmse_angular", "LstmRegressor", "SvrRegressor", "TcnRegressor",
    "create_model", "SessionLog", "StreamingExtractor", "td5",
]
