"""HDI time-days tensors: construction, scaling, masking, splitting, slot vectors.

A tensor holds ``k`` monitored channels, each an ``N`` days x ``M`` slots grid.
Values are stored as a ``(k, N, M)`` float64 array, so ``values.ravel()`` is
channel-major, then day, then slot. Unobserved cells always hold 0.0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

ROLES = ("train", "valid", "test")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HdiTensor:
    values: np.ndarray  # (k, N, M) float64
    observed: np.ndarray  # (k, N, M) bool
    channel_stats: np.ndarray | None = None  # (k, 2) rows of (min, max)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        observed = np.asarray(self.observed, dtype=bool)
        if values.ndim != 3 or values.shape != observed.shape:
            raise ValueError(f"values {values.shape} and observed {observed.shape} must be equal 3-d shapes")
        if min(values.shape) == 0:
            raise ValueError(f"zero dimension in shape {values.shape}")
        if np.any(values[~observed] != 0.0):
            raise ValueError("unobserved positions must hold 0.0")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite value in tensor")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "observed", _frozen(observed))
        if self.channel_stats is not None:
            stats = np.asarray(self.channel_stats, dtype=np.float64)
            if stats.shape != (values.shape[0], 2) or np.any(stats[:, 0] >= stats[:, 1]):
                raise ValueError("channel_stats must be (k, 2) with min < max per channel")
            object.__setattr__(self, "channel_stats", _frozen(stats))

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def n_days(self) -> int:
        return self.values.shape[1]

    @property
    def m_slots(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    @property
    def normalized(self) -> bool:
        return self.channel_stats is not None

    def observed_positions(self) -> np.ndarray:
        """(n, 3) int array of (channel, day, slot) for every entry in the observed set."""
        return np.argwhere(self.observed)

    def missing_positions(self) -> np.ndarray:
        return np.argwhere(~self.observed)

    def at(self, positions: np.ndarray) -> np.ndarray:
        positions = check_positions(self, positions)
        return self.values[positions[:, 0], positions[:, 1], positions[:, 2]]


@dataclass(frozen=True)
class EntrySplit:
    train: np.ndarray  # (n, 3) int
    valid: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ROLES:
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 3)))

    def role(self, name: str) -> np.ndarray:
        if name not in ROLES:
            raise ValueError(f"unknown split role {name!r}")
        return getattr(self, name)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.valid), len(self.test)


@dataclass(frozen=True)
class SlotVector:
    slot_index: int
    x: np.ndarray  # (k*N,)
    mask: np.ndarray  # (k*N,) bool


def check_positions(t: HdiTensor, positions) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.int64).reshape(-1, 3)
    if len(positions) and (np.any(positions < 0) or np.any(positions >= np.array(t.shape))):
        bad = positions[np.any((positions < 0) | (positions >= np.array(t.shape)), axis=1)][0]
        raise IndexError(f"position {tuple(bad)} out of range for tensor shape {t.shape}")
    return positions


def build_tensor(channels: Sequence[np.ndarray], observed: Sequence[np.ndarray] | None = None) -> HdiTensor:
    """Stack ``k`` per-channel N x M matrices into one tensor.

    ``observed`` gives per-channel boolean flags; when omitted, NaN marks a
    missing entry and everything else is observed.
    """
    if len(channels) == 0:
        raise ValueError("at least one channel is required")
    mats = [np.asarray(c, dtype=np.float64) for c in channels]
    if observed is None:
        flags = [~np.isnan(m) for m in mats]
    else:
        if len(observed) != len(mats):
            raise ValueError("one observed mask per channel is required")
        flags = [np.asarray(o, dtype=bool) for o in observed]
    shape = mats[0].shape
    for c, (m, f) in enumerate(zip(mats, flags)):
        if m.ndim != 2 or m.shape != shape or f.shape != shape:
            raise ValueError(f"channel {c} has shape {m.shape}, expected {shape}")
        if not np.all(np.isfinite(m[f])):
            raise ValueError(f"channel {c} has a non-finite observed value")
    values = np.stack(mats)
    obs = np.stack(flags)
    values = np.where(obs, values, 0.0)
    return HdiTensor(values, obs)


def normalize(t: HdiTensor) -> HdiTensor:
    """Per-channel min-max scaling of observed entries to [0, 1]."""
    if t.normalized:
        raise ValueError("tensor is already normalized")
    stats = np.empty((t.k, 2))
    for c in range(t.k):
        obs = t.values[c][t.observed[c]]
        if obs.size == 0:
            raise ValueError(f"channel {c} has no observed entries")
        lo, hi = obs.min(), obs.max()
        if lo == hi:
            raise ValueError(f"channel {c} is constant ({lo}); cannot normalize")
        stats[c] = lo, hi
    lo = stats[:, 0, None, None]
    span = (stats[:, 1] - stats[:, 0])[:, None, None]
    values = np.where(t.observed, (t.values - lo) / span, 0.0)
    return HdiTensor(values, t.observed, stats)


def denormalize(t: HdiTensor, positions, predictions) -> np.ndarray:
    """Map normalized predictions at ``positions`` back to physical units."""
    if t.channel_stats is None:
        raise ValueError("tensor has no channel_stats; it was never normalized")
    positions = check_positions(t, positions)
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape != (len(positions),):
        raise ValueError("one prediction per position is required")
    lo = t.channel_stats[positions[:, 0], 0]
    hi = t.channel_stats[positions[:, 0], 1]
    return predictions * (hi - lo) + lo


def to_raw(t: HdiTensor) -> HdiTensor:
    """Undo :func:`normalize` on every observed entry."""
    if t.channel_stats is None:
        raise ValueError("tensor has no channel_stats; it was never normalized")
    lo = t.channel_stats[:, 0, None, None]
    span = (t.channel_stats[:, 1] - t.channel_stats[:, 0])[:, None, None]
    return HdiTensor(np.where(t.observed, t.values * span + lo, 0.0), t.observed)


def apply_sparsity(t: HdiTensor, density: float, seed: int) -> HdiTensor:
    """Keep a uniform random subset of floor(density * k*N*M) observed entries.

    ``density`` is the fraction of ALL tensor cells that stay known, so 0.05
    means 95% of the tensor is missing afterwards.
    """
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    want = math.floor(density * t.values.size)
    flat_obs = np.flatnonzero(t.observed.ravel())
    if want > flat_obs.size:
        raise ValueError(f"density {density} needs {want} observed entries, only {flat_obs.size} available")
    if want == 0:
        raise ValueError(f"density {density} leaves no observed entries")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(flat_obs, size=want, replace=False))
    observed = np.zeros(t.values.size, dtype=bool)
    observed[keep] = True
    observed = observed.reshape(t.shape)
    return replace(t, values=np.where(observed, t.values, 0.0), observed=observed)


def split_entries(t: HdiTensor, seed: int) -> EntrySplit:
    """Random 60/20/20 partition of the observed set; test takes the rounding remainder."""
    n = t.n_observed
    n_train = math.floor(0.6 * n)
    n_valid = math.floor(0.2 * n)
    if n < 5 or n_train == 0 or n_valid == 0 or n - n_train - n_valid == 0:
        raise ValueError(f"{n} observed entries are too few for a train/valid/test split")
    pos = t.observed_positions()
    order = np.random.default_rng(seed).permutation(n)
    pos = pos[order]

    def sort(p):
        return p[np.lexsort(p.T[::-1])]

    return EntrySplit(
        train=sort(pos[:n_train]),
        valid=sort(pos[n_train : n_train + n_valid]),
        test=sort(pos[n_train + n_valid :]),
    )


def role_mask(t: HdiTensor, positions) -> np.ndarray:
    """Boolean (k, N, M) mask that is True at ``positions``."""
    positions = check_positions(t, positions)
    mask = np.zeros(t.shape, dtype=bool)
    mask[positions[:, 0], positions[:, 1], positions[:, 2]] = True
    return mask


def slot_matrix(t: HdiTensor, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stack all M slot vectors as rows: returns ``(X, mask)`` each of shape (M, k*N).

    Row ``m`` position ``c*N + n`` carries cell ``(c, n, m)``; cells outside
    ``mask`` are zero in ``X``.
    """
    mask = np.asarray(mask, dtype=bool) & t.observed
    x = np.where(mask, t.values, 0.0)
    # (k, N, M) -> (M, k*N)
    return x.reshape(t.k * t.n_days, t.m_slots).T.copy(), mask.reshape(t.k * t.n_days, t.m_slots).T.copy()


def vectorize(t: HdiTensor, split: EntrySplit, role: str) -> list[SlotVector]:
    if not t.normalized:
        raise ValueError("vectorize expects a normalized tensor")
    x, mask = slot_matrix(t, role_mask(t, split.role(role)))
    return [SlotVector(m, _frozen(x[m]), _frozen(mask[m])) for m in range(t.m_slots)]


def stack(vectors: Sequence[SlotVector]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([v.x for v in vectors]), np.stack([v.mask for v in vectors])


# --- synthetic load data -------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Per-channel shape of the synthetic load signal.

    Cell ``(c, n, m)`` is
    ``base[c] + amplitude[c]*sin(2*pi*m/M + phase[c]) + weekly[c]*cos(2*pi*(n mod 7)/7) + noise``
    with noise ~ N(0, noise_sigma[c]^2). ``noise_sigma`` of None means 5% of
    the noiseless range of each channel.
    """

    k: int = 3
    n_days: int = 21
    m_slots: int = 1440
    # power (W), voltage (V), apparent power (VA)
    base: list[float] = field(default_factory=lambda: [700.0, 240.0, 760.0])
    amplitude: list[float] = field(default_factory=lambda: [300.0, 4.0, 320.0])
    weekly: list[float] = field(default_factory=lambda: [60.0, 1.0, 70.0])
    phase: list[float] = field(default_factory=lambda: [0.0, math.pi, 0.3])
    noise_sigma: list[float] | None = None

    def resolved_noise(self) -> np.ndarray:
        if self.noise_sigma is None:
            return 0.05 * 2.0 * (np.abs(self.amplitude) + np.abs(self.weekly))
        return np.asarray(self.noise_sigma, dtype=np.float64)

    def validate(self):
        for name in ("k", "n_days", "m_slots"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("base", "amplitude", "weekly", "phase"):
            if len(getattr(self, name)) != self.k:
                raise ValueError(f"{name} needs {self.k} entries, got {len(getattr(self, name))}")
        noise = self.resolved_noise()
        if noise.shape != (self.k,) or np.any(noise < 0):
            raise ValueError(f"noise_sigma needs {self.k} non-negative entries")
        # positivity is guaranteed up to an 8-sigma noise excursion
        floor = np.asarray(self.base) - np.abs(self.amplitude) - np.abs(self.weekly) - 8 * noise
        if np.any(floor <= 0):
            raise ValueError("base too small: values could become non-positive")


def generate_synthetic(k: int = 3, n_days: int = 21, m_slots: int = 1440, seed: int = 0,
                       spec: SyntheticSpec | None = None) -> HdiTensor:
    """Fully observed daily/weekly-periodic load tensor, deterministic in ``seed``."""
    if spec is None:
        defaults = SyntheticSpec()
        if k > defaults.k:
            raise ValueError("pass a SyntheticSpec for more than 3 channels")
        spec = SyntheticSpec(k=k, n_days=n_days, m_slots=m_slots,
                             base=defaults.base[:k], amplitude=defaults.amplitude[:k],
                             weekly=defaults.weekly[:k], phase=defaults.phase[:k])
    spec.validate()
    k, n_days, m_slots = spec.k, spec.n_days, spec.m_slots
    col = lambda a: np.asarray(a, dtype=np.float64)[:, None, None]  # noqa: E731
    m = np.arange(m_slots)[None, None, :]
    n = np.arange(n_days)[None, :, None]
    daily = np.sin(2 * np.pi * m / m_slots + col(spec.phase))
    weekly = np.cos(2 * np.pi * (n % 7) / 7)
    values = col(spec.base) + col(spec.amplitude) * daily + col(spec.weekly) * weekly
    rng = np.random.default_rng(seed)
    values = values + col(spec.resolved_noise()) * rng.standard_normal((k, n_days, m_slots))
    if np.any(values <= 0):
        raise ValueError("synthetic draw produced a non-positive value")
    return HdiTensor(values, np.ones(values.shape, dtype=bool))


# --- CSV / manifest ingestion ---------------------------------------------------


def read_channel_csv(path) -> np.ndarray:
    """Read one N x M channel file; blank or ``NaN`` cells come back as NaN."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([math.nan if cell.strip() in ("", "NaN") else float(cell) for cell in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows with widths {sorted(widths)}")
    return np.array(rows, dtype=np.float64)


def write_channel_csv(path, values: np.ndarray, observed: np.ndarray):
    with open(path, "w", newline="") as fh:
        for row, obs in zip(values, observed):
            fh.write(",".join(repr(float(v)) if o else "" for v, o in zip(row, obs)))
            fh.write("\n")


def load_manifest(path) -> HdiTensor:
    """Load a dataset manifest ``{"channels": [...], "n_days": N, "m_slots": M}``.

    Channel paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    with open(path) as fh:
        manifest = json.load(fh)
    for key in ("channels", "n_days", "m_slots"):
        if key not in manifest:
            raise ValueError(f"{path}: manifest is missing {key!r}")
    mats = [read_channel_csv(path.parent / p) for p in manifest["channels"]]
    expected = (manifest["n_days"], manifest["m_slots"])
    for p, m in zip(manifest["channels"], mats):
        if m.shape != expected:
            raise ValueError(f"{p}: shape {m.shape} does not match manifest {expected}")
    return build_tensor(mats)


def save_dataset(t: HdiTensor, directory, extra: dict | None = None) -> Path:
    """Write one CSV per channel plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for c in range(t.k):
        name = f"channel_{c}.csv"
        write_channel_csv(directory / name, t.values[c], t.observed[c])
        names.append(name)
    manifest = {"channels": names, "n_days": t.n_days, "m_slots": t.m_slots}
    manifest.update(extra or {})
    out = directory / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
