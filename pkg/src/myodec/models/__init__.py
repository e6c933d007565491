"""TCN, LSTM and SVR regressors behind one predict/train/update/checkpoint contract."""
from __future__ import annotations

from ..config import RunConfig
from ..errors import UnsupportedModel
from ..storage_codec import decode_checkpoint
from .base import (
    Regressor,
    SequenceSet,
    TrainReport,
    as_sequence_set,
    predict,
    reinforce_update,
    train,
)
from .lstm import LstmRegressor
from .svr import SvrModel, SvrRegressor, dual_objective, kkt_violations, rbf_kernel, smo_solve, svr_fit
from .tcn import TcnRegressor

MODEL_KINDS = {"tcn": TcnRegressor, "lstm": LstmRegressor, "svr": SvrRegressor}
SEQUENTIAL_KINDS = ("tcn", "lstm")


def create_model(kind: str, n_features: int = 80, n_outputs: int = 7,
                 config: RunConfig | None = None, seed: int = 0) -> Regressor:
    if kind not in MODEL_KINDS:
        raise UnsupportedModel(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}")
    cfg = config or RunConfig()
    return MODEL_KINDS[kind](n_features, n_outputs, cfg.model(kind), seed=seed)


def checkpoint_save(model: Regressor) -> bytes:
    return model.to_bytes()


def checkpoint_load(data: bytes, expected_kind: str | None = None) -> Regressor:
    kind, config, arrays = decode_checkpoint(data, expected_kind)
    if kind not in MODEL_KINDS:
        raise UnsupportedModel(f"checkpoint holds unknown model kind {kind!r}")
    return MODEL_KINDS[kind]._restore(config, arrays)


__all__ = [
    "MODEL_KINDS", "SEQUENTIAL_KINDS", "Regressor", "SequenceSet", "TrainReport",
    "TcnRegressor", "LstmRegressor", "SvrRegressor", "SvrModel", "as_sequence_set",
    "checkpoint_load", "checkpoint_save", "create_model", "dual_objective", "kkt_violations",
    "predict", "rbf_kernel", "reinforce_update", "smo_solve", "svr_fit", "train",
]
