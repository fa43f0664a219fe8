"""Training loop and posterior-mean imputation for the slot-vector VAE."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import vae
from .data import EntrySplit, HdiTensor, check_positions, role_mask, slot_matrix
from .metrics import mae, rmse

log = logging.getLogger(__name__)

EPOCH_CSV_HEADER = ("epoch", "train_loss", "valid_rmse", "valid_mae", "wall_ms")


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs_max: int = 500
    batch_size: int = 32
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    patience: int = 30
    seed: int = 0
    hidden_dim: int = 64
    latent_dim: int = 8
    strict_mu_relu: bool = False
    # variance of the assumed observation noise on [0, 1]-scaled data; 1.0 collapses the posterior
    kl_weight: float = 0.01
    # wall-clock times make epoch logs non-reproducible; 0 is written when off
    record_wall_ms: bool = False

    def validate(self):
        if self.epochs_max < 1:
            raise ValueError("epochs_max must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not self.kl_weight > 0:
            raise ValueError("kl_weight must be > 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    valid_rmse: float
    valid_mae: float
    wall_ms: int


@dataclass
class TrainResult:
    params: vae.VaeParams
    history: list[EpochRecord]
    best_epoch: int
    adam: vae.AdamState

    def __iter__(self):
        # allows ``params, history = train(...)``
        return iter((self.params, self.history))


def _predict_rows(p: vae.VaeParams, x: np.ndarray) -> np.ndarray:
    """Decode every row with z = mu (no sampling)."""
    return vae.decoder_forward(p, vae.encoder_forward(p, x).mu)


def _param_norms(p: vae.VaeParams) -> str:
    return ", ".join(f"{n}={np.linalg.norm(a):.3g}" for n, a in p.arrays().items())


def train(t: HdiTensor, split: EntrySplit, cfg: TrainConfig,
          on_step: Callable[[int, vae.VaeGradients], None] | None = None) -> TrainResult:
    """Fit the VAE on the training split, selecting the epoch with best validation RMSE.

    Encoder inputs and loss both see only training entries. Validation feeds
    the same training-only inputs and scores the decoded output at the
    validation positions. ``on_step(step, grads)`` is called before every
    optimizer update.
    """
    cfg.validate()
    if not t.normalized:
        raise ValueError("train expects a normalized tensor")
    x_train, m_train = slot_matrix(t, role_mask(t, split.train))
    if not m_train.any():
        raise ValueError("training mask is empty for every slot vector")
    valid = split.valid
    valid_truth = t.at(valid)
    # slot row m, column c*N + n
    valid_rows = valid[:, 2]
    valid_cols = valid[:, 0] * t.n_days + valid[:, 1]

    rng = np.random.default_rng(cfg.seed)
    params = vae.init_params(x_train.shape[1], cfg.hidden_dim, cfg.latent_dim,
                             seed=int(rng.integers(2**63)), strict_mu_relu=cfg.strict_mu_relu)
    adam = vae.AdamState.zeros_like(params)
    best = (np.inf, params, 0, adam)
    history: list[EpochRecord] = []
    step = 0
    since_best = 0
    n_vec = x_train.shape[0]

    for epoch in range(1, cfg.epochs_max + 1):
        start = time.perf_counter()
        order = rng.permutation(n_vec)
        losses = []
        for bi, lo in enumerate(range(0, n_vec, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            xb, mb = x_train[idx], m_train[idx]
            inter = vae.total_loss(params, xb, mb, rng=rng, kl_weight=cfg.kl_weight)
            loss = inter[0]
            if not np.isfinite(loss.total):
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch}, batch {bi}: {loss}; parameter norms: {_param_norms(params)}")
            grads = vae.backward(params, xb, mb, inter, kl_weight=cfg.kl_weight)
            step += 1
            if on_step is not None:
                on_step(step, grads)
            params, adam = vae.adam_step(params, grads, adam, step, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam)
            losses.append(loss.total * len(idx))
        train_loss = float(np.sum(losses) / n_vec)

        pred = _predict_rows(params, x_train)[valid_rows, valid_cols]
        v_rmse = rmse(valid_truth, pred) if len(valid) else float("nan")
        v_mae = mae(valid_truth, pred) if len(valid) else float("nan")
        wall_ms = int(round(1000 * (time.perf_counter() - start))) if cfg.record_wall_ms else 0
        history.append(EpochRecord(epoch, train_loss, v_rmse, v_mae, wall_ms))
        log.debug("epoch %d loss %.6f valid_rmse %.6f", epoch, train_loss, v_rmse)

        if v_rmse < best[0]:
            best = (v_rmse, params, epoch, adam)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    _, best_params, best_epoch, best_adam = best
    if best_epoch == 0:
        # no validation entries: fall back to the last epoch
        best_params, best_epoch, best_adam = params, len(history), adam
    return TrainResult(best_params, history, best_epoch, best_adam)


def visible_mask(t: HdiTensor, exclude=None) -> np.ndarray:
    """Observed cells minus ``exclude`` positions."""
    mask = t.observed.copy()
    if exclude is not None and len(exclude):
        mask &= ~role_mask(t, exclude)
    return mask


def predict_at(p: vae.VaeParams, t: HdiTensor, positions, visible: np.ndarray | None = None) -> np.ndarray:
    """Posterior-mean predictions at ``positions`` in normalized units.

    Encoder inputs are the ``visible`` cells; by default every observed cell
    except the requested positions, so a value is never fed in to predict itself.
    """
    positions = check_positions(t, positions)
    if p.input_dim != t.k * t.n_days:
        raise ValueError(f"model input_dim {p.input_dim} does not match tensor k*N = {t.k * t.n_days}")
    if len(positions) == 0:
        return np.empty(0)
    if visible is None:
        visible = visible_mask(t, positions)
    x, _ = slot_matrix(t, visible)
    # decode every slot so any subset of positions sees bit-identical arithmetic
    decoded = _predict_rows(p, x)
    return decoded[positions[:, 2], positions[:, 0] * t.n_days + positions[:, 1]]


def impute(p: vae.VaeParams, t: HdiTensor, extra_positions=None) -> tuple[np.ndarray, np.ndarray]:
    """Fill every unobserved cell. Returns ``(positions, values)``, positions sorted (c, n, m).

    ``extra_positions`` (observed cells) are appended for evaluation; they are
    hidden from the encoder like any requested position.
    """
    positions = t.missing_positions()
    if extra_positions is not None and len(extra_positions):
        positions = np.concatenate([positions, check_positions(t, extra_positions)])
    return positions, predict_at(p, t, positions)


def write_epoch_csv(path, history: list[EpochRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_CSV_HEADER)
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.valid_rmse), repr(r.valid_mae), r.wall_ms])
