"""Linear latent-factor baseline (SGD matrix factorization) and a per-channel mean imputer.

The k x N x M tensor is viewed as a (k*N) x M matrix: row ``c*N + n``,
column ``m``, the same layout the VAE sees.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import EntrySplit, HdiTensor, check_positions
from .framing import read_framed, write_framed
from .metrics import rmse

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "vaelf-lfa"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FactorMatrices:
    P: np.ndarray  # (k*N, D) row factors
    Q: np.ndarray  # (M, D) column factors
    n_days: int

    def __post_init__(self):
        if self.P.ndim != 2 or self.Q.ndim != 2 or self.P.shape[1] != self.Q.shape[1] or self.P.shape[1] < 1:
            raise ValueError(f"incompatible factor shapes {self.P.shape}, {self.Q.shape}")
        if not (np.all(np.isfinite(self.P)) and np.all(np.isfinite(self.Q))):
            raise ValueError("factors must be finite")

    @property
    def rank(self) -> int:
        return self.P.shape[1]


@dataclass
class LfaConfig:
    rank: int = 8
    lr: float = 0.01
    lam: float = 0.02
    epochs: int = 300
    patience: int = 30
    seed: int = 0

    def validate(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.epochs < 1 or self.patience < 1:
            raise ValueError("epochs and patience must be >= 1")


def _rows_cols(positions: np.ndarray, n_days: int) -> tuple[np.ndarray, np.ndarray]:
    return positions[:, 0] * n_days + positions[:, 1], positions[:, 2]


def sgd_step(P: np.ndarray, Q: np.ndarray, row: int, col: int, x: float, lr: float, lam: float) -> float:
    """In-place SGD update for one observed entry; returns the pre-update error."""
    p = P[row].copy()
    q = Q[col]
    e = x - p @ q
    P[row] = p + lr * (e * q - lam * p)
    Q[col] = q + lr * (e * p - lam * q)
    return e


def lfa_train(t: HdiTensor, split: EntrySplit, cfg: LfaConfig | None = None, **overrides) -> FactorMatrices:
    """Regularized SGD on 0.5*(x - p.q)^2 + lam/2 (|p|^2 + |q|^2) over training entries.

    Keeps the factors with the best validation RMSE; stops after ``patience``
    epochs without improvement.
    """
    cfg = cfg or LfaConfig()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    cfg.validate()
    if not t.normalized:
        raise ValueError("lfa_train expects a normalized tensor")
    n_rows, n_cols = t.k * t.n_days, t.m_slots
    if cfg.rank >= min(n_rows, n_cols):
        raise ValueError(f"rank {cfg.rank} must be below min(k*N, M) = {min(n_rows, n_cols)}")
    train = split.train
    if len(train) == 0:
        raise ValueError("empty training set")
    rows, cols = _rows_cols(train, t.n_days)
    vals = t.at(train)
    rows_l, cols_l, vals_l = rows.tolist(), cols.tolist(), vals.tolist()
    valid = split.valid
    valid_truth = t.at(valid)

    rng = np.random.default_rng(cfg.seed)
    P = rng.uniform(0.0, 0.1, size=(n_rows, cfg.rank))
    Q = rng.uniform(0.0, 0.1, size=(n_cols, cfg.rank))
    best = (np.inf, P.copy(), Q.copy())
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        for i in rng.permutation(len(vals_l)).tolist():
            sgd_step(P, Q, rows_l[i], cols_l[i], vals_l[i], cfg.lr, cfg.lam)
        err = vals - np.einsum("ij,ij->i", P[rows], Q[cols])
        objective = 0.5 * float(err @ err) + 0.5 * cfg.lam * float(np.sum(P * P) + np.sum(Q * Q))
        if not np.isfinite(objective) or objective > 1e6:
            raise DivergenceError(f"MF objective {objective:.3g} at epoch {epoch}; lower the learning rate")
        if len(valid) == 0:
            best = (np.nan, P.copy(), Q.copy())
            continue
        v_rmse = rmse(valid_truth, _predict(P, Q, valid, t.n_days))
        log.debug("lfa epoch %d objective %.6f valid_rmse %.6f", epoch, objective, v_rmse)
        if v_rmse < best[0]:
            best = (v_rmse, P.copy(), Q.copy())
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return FactorMatrices(best[1], best[2], t.n_days)


def _predict(P, Q, positions, n_days):
    rows, cols = _rows_cols(positions, n_days)
    return np.einsum("ij,ij->i", P[rows], Q[cols])


def lfa_predict(f: FactorMatrices, positions) -> np.ndarray:
    """Inner products at ``positions``; deliberately not clamped to [0, 1]."""
    positions = np.asarray(positions, dtype=np.int64).reshape(-1, 3)
    k = f.P.shape[0] // f.n_days
    limits = np.array([k, f.n_days, f.Q.shape[0]])
    if len(positions) and (np.any(positions < 0) or np.any(positions >= limits)):
        raise IndexError(f"position out of range for factor shape k={k}, N={f.n_days}, M={f.Q.shape[0]}")
    return _predict(f.P, f.Q, positions, f.n_days)


def mean_impute(t: HdiTensor, split: EntrySplit, positions) -> np.ndarray:
    """Per-channel mean of training values, broadcast to each position's channel."""
    positions = check_positions(t, positions)
    train = split.train
    vals = t.at(train)
    means = np.empty(t.k)
    for c in range(t.k):
        sel = vals[train[:, 0] == c]
        if sel.size == 0:
            raise ValueError(f"channel {c} has no training entries")
        means[c] = sel.mean()
    return means[positions[:, 0]]


def save_factors(path, f: FactorMatrices, seed: int = 0):
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "rows": f.P.shape[0],
        "cols": f.Q.shape[0],
        "n_days": f.n_days,
        "rank": f.rank,
        "seed": seed,
        "arrays": [{"name": "P", "shape": list(f.P.shape)}, {"name": "Q", "shape": list(f.Q.shape)}],
    }
    write_framed(path, header, [f.P, f.Q])


def load_factors(path, t: HdiTensor | None = None) -> FactorMatrices:
    header, (P, Q) = read_framed(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION)
    if t is not None and (header["rows"], header["cols"], header["n_days"]) != (t.k * t.n_days, t.m_slots, t.n_days):
        raise ValueError(f"{path}: factor dims do not match the dataset")
    return FactorMatrices(P, Q, header["n_days"])
