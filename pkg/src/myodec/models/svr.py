"""Frame-wise epsilon-SVR with a Gaussian RBF kernel, one machine per DoF.

The dual is solved with sequential minimal optimization in the LIBSVM
formulation: 2n variables ``a`` with signs ``s = (+1,...,-1,...)``, linear
term ``p = (eps - y, eps + y)`` and ``Q[i, j] = s_i s_j K(i mod n, j mod n)``.

    minimize   0.5 a'Qa + p'a
    subject to s'a = 0,  0 <= a <= C

Working pairs are chosen with second-order information; iteration stops
once the maximal KKT violation ``m(a) - M(a)`` drops below ``tol``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..config import SvrConfig
from ..errors import EmptyDataset, NoConvergence, NotTrained
from .base import Regressor, TrainReport

TAU = 1e-12


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * |a - b|^2) for every row pair of ``A`` and ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    d = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(d, 0.0))


@njit(cache=True)
def _smo(K, y, eps, C, tol, max_iter):
    n = y.size
    m = 2 * n
    s = np.empty(m)
    p = np.empty(m)
    for t in range(n):
        s[t] = 1.0
        s[t + n] = -1.0
        p[t] = eps - y[t]
        p[t + n] = eps + y[t]
    a = np.zeros(m)
    G = p.copy()
    it = 0
    while True:
        # i: maximal violator in the "up" set
        gmax = -np.inf
        i = -1
        for t in range(m):
            if s[t] > 0:
                if a[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            else:
                if a[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
        gmax2 = -np.inf
        j = -1
        best = np.inf
        if i >= 0:
            ii = i % n
            for t in range(m):
                tt = t % n
                if s[t] > 0:
                    if a[t] > 0:
                        diff = gmax + G[t]
                        if G[t] >= gmax2:
                            gmax2 = G[t]
                        if diff > 0:
                            quad = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                            if quad <= 0:
                                quad = TAU
                            obj = -(diff * diff) / quad
                            if obj <= best:
                                best = obj
                                j = t
                else:
                    if a[t] < C:
                        diff = gmax - G[t]
                        if -G[t] >= gmax2:
                            gmax2 = -G[t]
                        if diff > 0:
                            quad = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                            if quad <= 0:
                                quad = TAU
                            obj = -(diff * diff) / quad
                            if obj <= best:
                                best = obj
                                j = t
        if gmax + gmax2 < tol or j == -1:
            break
        if it >= max_iter:
            return a, G, s, it, False
        it += 1

        ii = i % n
        jj = j % n
        quad = K[ii, ii] + K[jj, jj] - 2.0 * K[ii, jj]
        if quad <= 0:
            quad = TAU
        ai_old = a[i]
        aj_old = a[j]
        if s[i] != s[j]:
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            tot = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if tot > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = tot - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = tot
            if tot > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = tot - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = tot
        dai = a[i] - ai_old
        daj = a[j] - aj_old
        for t in range(m):
            tt = t % n
            G[t] += s[t] * (s[i] * K[ii, tt] * dai + s[j] * K[jj, tt] * daj)
    return a, G, s, it, True


def _rho(a, G, s, C):
    yG = s * G
    upper = a >= C
    lower = a <= 0
    free = ~(upper | lower)
    if free.any():
        return float(yG[free].mean())
    ub_mask = (upper & (s < 0)) | (lower & (s > 0))
    lb_mask = (upper & (s > 0)) | (lower & (s < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2)


@dataclass
class SvrModel:
    """One DoF: f(x) = sum_i coef_i k(x_i, x) + b."""

    support: np.ndarray
    coef: np.ndarray
    b: float
    gamma: float
    iterations: int = 0

    @property
    def n_support(self) -> int:
        return int(self.support.shape[0])

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.n_support == 0:
            return np.full(X.shape[0], self.b)
        return rbf_kernel(X, self.support, self.gamma) @ self.coef + self.b


def smo_solve(K: np.ndarray, y: np.ndarray, C: float = 1.0, epsilon: float = 0.05,
              tol: float = 1e-3, max_passes: int = 200):
    """Solve the epsilon-SVR dual for a precomputed kernel; returns (coef, b, iterations)."""
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
    n = y.size
    a, G, s, it, ok = _smo(K, y, float(epsilon), float(C), float(tol), int(max_passes) * 2 * n)
    if not ok:
        raise NoConvergence(f"SMO did not reach tol {tol} within {max_passes} passes")
    coef = a[:n] - a[n:]
    return coef, -_rho(a, G, s, C), int(it)


def svr_fit(x: np.ndarray, y: np.ndarray, cfg: SvrConfig | None = None) -> SvrModel:
    cfg = cfg or SvrConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[0] != y.size:
        raise EmptyDataset("SVR needs at least 2 (frame, target) samples")
    K = rbf_kernel(x, x, cfg.gamma)
    coef, b, it = smo_solve(K, y, cfg.C, cfg.epsilon, cfg.tol, cfg.max_passes)
    sv = np.abs(coef) > 0
    return SvrModel(x[sv].copy(), coef[sv].copy(), b, cfg.gamma, it)


def dual_objective(K: np.ndarray, y: np.ndarray, coef: np.ndarray, epsilon: float) -> float:
    """0.5 b'Kb - y'b + eps*|b|_1 with b = a - a*, the minimized dual value."""
    coef = np.asarray(coef, dtype=np.float64)
    return float(0.5 * coef @ K @ coef - y @ coef + epsilon * np.abs(coef).sum())


def kkt_violations(model: SvrModel, x: np.ndarray, y: np.ndarray, C: float, epsilon: float,
                   tol: float = 1e-3) -> int:
    """Count samples whose (a, a*) complementary-slackness case fails by more than ``tol``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    coef = np.zeros(y.size)
    if model.n_support:
        # map support vectors back to their rows
        for sv, c in zip(model.support, model.coef):
            coef[np.flatnonzero(np.all(x == sv, axis=1))[0]] = c
    r = y - model.decision(x)  # residual
    bad = 0
    for ci, ri in zip(coef, r):
        if ci == 0:
            ok = abs(ri) <= epsilon + tol
        elif 0 < ci < C:
            ok = abs(ri - epsilon) <= tol
        elif ci >= C:
            ok = ri >= epsilon - tol
        elif -C < ci < 0:
            ok = abs(ri + epsilon) <= tol
        else:
            ok = ri <= -epsilon + tol
        bad += not ok
    return bad


class SvrRegressor(Regressor):
    kind = "svr"
    sequential = False

    def __init__(self, n_features: int = 80, n_outputs: int = 7, config: SvrConfig | None = None,
                 seed: int = 0):
        cfg = config or SvrConfig()
        super().__init__(n_features, n_outputs, cfg.window_ms, cfg.sequence)
        self.cfg = cfg
        self.seed = seed
        self.train_x: np.ndarray | None = None
        self.coef: np.ndarray | None = None
        self.b: np.ndarray | None = None

    @property
    def trained(self) -> bool:
        return self.coef is not None

    @property
    def machines(self) -> list[SvrModel]:
        if not self.trained:
            raise NotTrained("SVR has not been fitted")
        out = []
        for c, b in zip(self.coef, self.b):
            sv = c != 0
            out.append(SvrModel(self.train_x[sv], c[sv], float(b), self.cfg.gamma))
        return out

    def predict_batch(self, X, chunk: int = 2048) -> np.ndarray:
        if not self.trained:
            raise NotTrained("SVR has not been fitted")
        return super().predict_batch(X, chunk)

    def _predict(self, Xs):
        k = rbf_kernel(Xs[:, -1, :], self.train_x, self.cfg.gamma)
        return np.clip(k @ self.coef.T + self.b, 0.0, 1.0)

    def train(self, data, epochs=None, batch_size: int = 24, seed: int = 0,
              lr: float = 1e-3) -> TrainReport:
        """Fit one machine per DoF; ``epochs``/``batch_size``/``lr`` do not apply."""
        data = self._prepare(data)
        t0 = time.perf_counter()
        x = self.standardizer.apply(data.last_features())
        y = data.targets[data.ends]
        if x.shape[0] > self.cfg.max_train:
            # evenly spaced in time so the subset spans the whole session
            idx = np.unique(np.linspace(0, x.shape[0] - 1, self.cfg.max_train).round().astype(int))
            x, y = x[idx], y[idx]
        K = rbf_kernel(x, x, self.cfg.gamma)
        coefs, bs, iters = [], [], []
        for d in range(self.n_outputs):
            c, b, it = smo_solve(K, y[:, d], self.cfg.C, self.cfg.epsilon, self.cfg.tol,
                                 self.cfg.max_passes)
            coefs.append(c)
            bs.append(b)
            iters.append(it)
        self.train_x = x
        self.coef = np.stack(coefs)
        self.b = np.array(bs)
        self.iterations = iters
        return TrainReport(losses=[], seconds=time.perf_counter() - t0, n_pairs=len(data))

    def _config(self) -> dict:
        c = self.cfg
        return {"gamma": c.gamma, "C": c.C, "epsilon": c.epsilon, "tol": c.tol,
                "max_passes": c.max_passes, "max_train": c.max_train, "seed": self.seed,
                "trained": self.trained}

    def _arrays(self):
        return [self.train_x, self.coef, self.b] if self.trained else []

    @classmethod
    def _from_parts(cls, config, arrays):
        cfg = SvrConfig(window_ms=config["window_ms"], sequence=config["seq_len"],
                        gamma=config["gamma"], C=config["C"], epsilon=config["epsilon"],
                        tol=config["tol"], max_passes=config["max_passes"],
                        max_train=config["max_train"])
        model = cls(config["n_features"], config["n_outputs"], cfg, seed=config["seed"])
        if config["trained"]:
            model.train_x, model.coef, model.b = arrays
        return model
