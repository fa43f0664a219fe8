"""Fully connected VAE with hand-derived gradients.

Encoder: h = relu(w1 x + b1); mu = w2 h + b2; logvar = clip(w3 h + b3, -10, 10)
Decoder: x_hat = sigmoid(w5 relu(w4 z + b4) + b5)
Per-vector loss: 0.5 * sum_mask (x - x_hat)^2 + kl_weight * 0.5 * sum (mu^2 + exp(logvar) - logvar - 1)

``kl_weight`` defaults to 1. A unit-variance Gaussian likelihood only means
something relative to the data's units; on [0, 1]-scaled data a weight below 1
is the same as assuming observation noise with variance ``kl_weight``.

All functions accept a single vector of shape (D,) or a batch of shape (B, D).
Batch losses and gradients are means over the B per-vector losses.

Gaussian noise comes from numpy's ``Generator.standard_normal`` (ziggurat on a
PCG64 bit stream), so a seed fixes the exact draw sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .framing import read_framed, write_framed

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "w5", "b5")
CHECKPOINT_FORMAT = "vaelf-vae"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class VaeParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray
    w5: np.ndarray
    b5: np.ndarray
    # literal ReLU on the mean head; ablation only
    strict_mu_relu: bool = False

    def __post_init__(self):
        for name in PARAM_NAMES:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        expected = param_shapes(self.input_dim, self.hidden_dim, self.latent_dim)
        for name in PARAM_NAMES:
            if getattr(self, name).shape != expected[name]:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {expected[name]}")
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.w2.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "VaeParams":
        return VaeParams(**arrays, strict_mu_relu=self.strict_mu_relu)


@dataclass(frozen=True)
class VaeGradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray
    w5: np.ndarray
    b5: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class EncoderOutput:
    h: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    # pre-activations, kept for backward
    hidden_pre: np.ndarray
    mu_pre: np.ndarray
    logvar_pre: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar)


@dataclass(frozen=True)
class LatentSample:
    eps: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    kl: float
    total: float
    observed_count: int


def param_shapes(input_dim: int, hidden_dim: int, latent_dim: int) -> dict[str, tuple]:
    return {
        "w1": (hidden_dim, input_dim), "b1": (hidden_dim,),
        "w2": (latent_dim, hidden_dim), "b2": (latent_dim,),
        "w3": (latent_dim, hidden_dim), "b3": (latent_dim,),
        "w4": (hidden_dim, latent_dim), "b4": (hidden_dim,),
        "w5": (input_dim, hidden_dim), "b5": (input_dim,),
    }


def init_params(input_dim: int, hidden_dim: int = 64, latent_dim: int = 8, seed: int = 0,
                strict_mu_relu: bool = False) -> VaeParams:
    """Glorot-uniform weights, zero biases."""
    if min(input_dim, hidden_dim, latent_dim) <= 0:
        raise ValueError("dimensions must be positive")
    if latent_dim >= input_dim:
        raise ValueError(f"latent_dim ({latent_dim}) must be smaller than input_dim ({input_dim})")
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(input_dim, hidden_dim, latent_dim).items():
        if name.startswith("w"):
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return VaeParams(**arrays, strict_mu_relu=strict_mu_relu)


def zero_params(input_dim: int, hidden_dim: int, latent_dim: int) -> VaeParams:
    return VaeParams(**{n: np.zeros(s) for n, s in param_shapes(input_dim, hidden_dim, latent_dim).items()})


def relu(a):
    return np.maximum(a, 0.0)


def sigmoid(a):
    # split by sign to avoid overflow in exp
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_dim(x, dim, what):
    if x.shape[-1] != dim:
        raise ValueError(f"{what} has length {x.shape[-1]}, expected {dim}")


def encoder_forward(p: VaeParams, x) -> EncoderOutput:
    x = np.asarray(x, dtype=np.float64)
    _check_dim(x, p.input_dim, "input")
    hidden_pre = x @ p.w1.T + p.b1
    h = relu(hidden_pre)
    mu_pre = h @ p.w2.T + p.b2
    mu = relu(mu_pre) if p.strict_mu_relu else mu_pre
    logvar_pre = h @ p.w3.T + p.b3
    logvar = np.clip(logvar_pre, LOGVAR_MIN, LOGVAR_MAX)
    return EncoderOutput(h, mu, logvar, hidden_pre, mu_pre, logvar_pre)


def reparameterize(e: EncoderOutput, rng: np.random.Generator | None = None, eps=None) -> LatentSample:
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I); pass ``eps`` to hold the draw fixed."""
    if eps is None:
        eps = rng.standard_normal(e.mu.shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != e.mu.shape:
        raise ValueError(f"eps shape {eps.shape} does not match mu shape {e.mu.shape}")
    return LatentSample(eps, e.mu + e.sigma * eps)


def _decode(p: VaeParams, z):
    z = np.asarray(z, dtype=np.float64)
    _check_dim(z, p.latent_dim, "latent vector")
    dec_pre = z @ p.w4.T + p.b4
    r = relu(dec_pre)
    return dec_pre, r, sigmoid(r @ p.w5.T + p.b5)


def decoder_forward(p: VaeParams, z) -> np.ndarray:
    return _decode(p, z)[2]


def kl_divergence(e: EncoderOutput) -> float:
    """Closed-form KL(N(mu, sigma^2) || N(0, I)), summed over every latent entry."""
    lv = e.logvar
    # expm1(lv) - lv is the accurate form of exp(lv) - lv - 1 near lv = 0
    return float(0.5 * np.sum(e.mu ** 2 + np.expm1(lv) - lv))


def recon_loss(x_hat, x, mask) -> tuple[float, int]:
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if x_hat.shape != x.shape or mask.shape != x.shape:
        raise ValueError(f"shape mismatch: x_hat {x_hat.shape}, x {x.shape}, mask {mask.shape}")
    diff = np.where(mask, x - x_hat, 0.0)
    return float(0.5 * np.sum(diff * diff)), int(mask.sum())


def _batch_size(x) -> int:
    return 1 if np.ndim(x) == 1 else np.shape(x)[0]


def total_loss(p: VaeParams, x, mask, rng=None, eps=None, kl_weight: float = 1.0):
    """Forward pass plus loss; returns ``(LossBreakdown, LatentSample, EncoderOutput, x_hat)``.

    ``LossBreakdown.kl`` is the unweighted KL; ``total`` is ``recon + kl_weight * kl``.
    """
    enc = encoder_forward(p, x)
    sample = reparameterize(enc, rng, eps)
    x_hat = decoder_forward(p, sample.z)
    recon, count = recon_loss(x_hat, x, mask)
    b = _batch_size(x)
    recon /= b
    kl = kl_divergence(enc) / b
    return LossBreakdown(recon, kl, recon + kl_weight * kl, count), sample, enc, x_hat


def backward(p: VaeParams, x, mask, intermediates, kl_weight: float = 1.0) -> VaeGradients:
    """Exact gradient of the mean per-vector loss, with eps held fixed.

    ReLU and clip derivatives are taken as 0 at their kinks.
    """
    _, sample, enc, x_hat = intermediates
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if x_hat.shape != x.shape or mask.shape != x.shape or enc.mu.shape[:-1] != x.shape[:-1]:
        raise ValueError("intermediates do not match this input")
    if enc.h.shape[-1] != p.hidden_dim or sample.z.shape[-1] != p.latent_dim:
        raise ValueError("intermediates do not match these parameters")
    x2 = np.atleast_2d(x)
    b = x2.shape[0]
    mask2 = np.atleast_2d(mask)
    xh = np.atleast_2d(x_hat)
    z = np.atleast_2d(sample.z)
    eps = np.atleast_2d(sample.eps)
    h = np.atleast_2d(enc.h)
    hidden_pre = np.atleast_2d(enc.hidden_pre)
    mu = np.atleast_2d(enc.mu)
    mu_pre = np.atleast_2d(enc.mu_pre)
    logvar = np.atleast_2d(enc.logvar)
    logvar_pre = np.atleast_2d(enc.logvar_pre)
    dec_pre, r, _ = _decode(p, z)

    # output layer: d/da of 0.5*(x - sigmoid(a))^2 on masked entries
    d_out = np.where(mask2, xh - x2, 0.0) * xh * (1.0 - xh) / b
    g_w5 = d_out.T @ r
    g_b5 = d_out.sum(axis=0)
    d_dec = (d_out @ p.w5) * (dec_pre > 0)
    g_w4 = d_dec.T @ z
    g_b4 = d_dec.sum(axis=0)
    d_z = d_dec @ p.w4

    sigma = np.exp(0.5 * logvar)
    d_mu = d_z + kl_weight * mu / b
    d_logvar = d_z * eps * 0.5 * sigma + kl_weight * 0.5 * np.expm1(logvar) / b
    inside = (logvar_pre > LOGVAR_MIN) & (logvar_pre < LOGVAR_MAX)
    d_lv_pre = d_logvar * inside
    d_mu_pre = d_mu * (mu_pre > 0) if p.strict_mu_relu else d_mu

    g_w2 = d_mu_pre.T @ h
    g_b2 = d_mu_pre.sum(axis=0)
    g_w3 = d_lv_pre.T @ h
    g_b3 = d_lv_pre.sum(axis=0)
    d_hidden = (d_mu_pre @ p.w2 + d_lv_pre @ p.w3) * (hidden_pre > 0)
    g_w1 = d_hidden.T @ x2
    g_b1 = d_hidden.sum(axis=0)
    return VaeGradients(g_w1, g_b1, g_w2, g_b2, g_w3, g_b3, g_w4, g_b4, g_w5, g_b5)


# --- Adam ---------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, p: VaeParams) -> "AdamState":
        return cls({n: np.zeros_like(a) for n, a in p.arrays().items()},
                   {n: np.zeros_like(a) for n, a in p.arrays().items()}, 0)


def adam_step(p: VaeParams, g: VaeGradients, state: AdamState, step_index: int, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[VaeParams, AdamState]:
    """One bias-corrected Adam update; ``step_index`` counts from 1."""
    if step_index < 1:
        raise ValueError("step_index starts at 1")
    grads = g.arrays()
    new_p, new_m, new_v = {}, {}, {}
    for name, value in p.arrays().items():
        grad = grads[name]
        if grad.shape != value.shape or state.m[name].shape != value.shape:
            raise ValueError(f"shape mismatch for {name}")
        m = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = beta2 * state.v[name] + (1.0 - beta2) * (grad * grad)
        m_hat = m / (1.0 - beta1 ** step_index)
        v_hat = v / (1.0 - beta2 ** step_index)
        new_p[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return p.with_arrays(new_p), AdamState(new_m, new_v, step_index)


# --- checkpoint ---------------------------------------------------------------


def save_checkpoint(path, p: VaeParams, seed: int = 0, adam: AdamState | None = None, extra: dict | None = None):
    names = list(PARAM_NAMES)
    arrays = [getattr(p, n) for n in names]
    if adam is not None:
        names += [f"adam_m.{n}" for n in PARAM_NAMES] + [f"adam_v.{n}" for n in PARAM_NAMES]
        arrays += [adam.m[n] for n in PARAM_NAMES] + [adam.v[n] for n in PARAM_NAMES]
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": p.input_dim,
        "hidden_dim": p.hidden_dim,
        "latent_dim": p.latent_dim,
        "strict_mu_relu": p.strict_mu_relu,
        "seed": seed,
        "step": adam.step if adam is not None else 0,
        "logvar_clamp": [LOGVAR_MIN, LOGVAR_MAX],
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
    }
    header.update(extra or {})
    write_framed(path, header, arrays)


def load_checkpoint(path, input_dim: int | None = None) -> tuple[VaeParams, AdamState | None, dict]:
    header, arrays = read_framed(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION)
    if input_dim is not None and header["input_dim"] != input_dim:
        raise ValueError(f"{path}: checkpoint input_dim {header['input_dim']} does not match dataset ({input_dim})")
    if header["logvar_clamp"] != [LOGVAR_MIN, LOGVAR_MAX]:
        raise ValueError(f"{path}: checkpoint clamp bounds {header['logvar_clamp']} differ from this build")
    by_name = {e["name"]: a for e, a in zip(header["arrays"], arrays)}
    expected = param_shapes(header["input_dim"], header["hidden_dim"], header["latent_dim"])
    for n in PARAM_NAMES:
        if n not in by_name or by_name[n].shape != expected[n]:
            raise ValueError(f"{path}: array {n} missing or mis-shaped")
    p = VaeParams(**{n: by_name[n] for n in PARAM_NAMES}, strict_mu_relu=header["strict_mu_relu"])
    adam = None
    if "adam_m.w1" in by_name:
        adam = AdamState({n: by_name[f"adam_m.{n}"] for n in PARAM_NAMES},
                         {n: by_name[f"adam_v.{n}"] for n in PARAM_NAMES}, header["step"])
    return p, adam, header

