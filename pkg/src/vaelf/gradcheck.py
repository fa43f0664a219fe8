"""Central finite-difference check of :func:`vae.backward`.

The numerical side only calls :func:`vae.total_loss` with a fixed eps, so it
shares no code with the analytic gradient beyond the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import vae

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-7
KINK_MARGIN = 1e-6


@dataclass
class GradCheckReport:
    n_configs: int
    max_rel_error: dict[str, float]
    n_resampled: int

    @property
    def passed(self) -> bool:
        return all(e <= REL_TOL for e in self.max_rel_error.values())

    def lines(self) -> list[str]:
        out = [f"{name:>3}  max_rel_err={err:.3e}  {'ok' if err <= REL_TOL else 'FAIL'}"
               for name, err in self.max_rel_error.items()]
        out.append(f"configs={self.n_configs} resampled={self.n_resampled} "
                   f"tolerance={REL_TOL:g} -> {'PASS' if self.passed else 'FAIL'}")
        return out


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Per-coordinate error, relative to max(|analytic|, |numeric|).

    The denominator never drops below ABS_FLOOR / REL_TOL, so a coordinate
    passes (value <= REL_TOL) when it is within REL_TOL relative error or
    within ABS_FLOOR absolute error.
    """
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return diff / np.maximum(scale, ABS_FLOOR / REL_TOL)


def numeric_gradient(p: vae.VaeParams, x, mask, eps, h: float = FD_STEP,
                     kl_weight: float = 1.0) -> dict[str, np.ndarray]:
    out = {}
    arrays = {n: a.copy() for n, a in p.arrays().items()}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = vae.total_loss(p.with_arrays(arrays), x, mask, eps=eps, kl_weight=kl_weight)[0].total
            flat[i] = orig - h
            down = vae.total_loss(p.with_arrays(arrays), x, mask, eps=eps, kl_weight=kl_weight)[0].total
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def near_kink(p: vae.VaeParams, x, eps, margin: float = KINK_MARGIN) -> bool:
    """True when a ReLU or clip input sits within ``margin`` of its kink."""
    enc = vae.encoder_forward(p, x)
    z = vae.reparameterize(enc, eps=eps).z
    dec_pre = z @ p.w4.T + p.b4
    checks = [enc.hidden_pre, dec_pre,
              enc.logvar_pre - vae.LOGVAR_MIN, enc.logvar_pre - vae.LOGVAR_MAX]
    if p.strict_mu_relu:
        checks.append(enc.mu_pre)
    return any(np.any(np.abs(c) < margin) for c in checks)


def random_case(rng: np.random.Generator, strict_mu_relu: bool = False):
    """Small random (params, x, mask, eps) with uniform-random weights and biases.

    ``b3`` is skewed negative so some log-variances land below the lower clamp.
    """
    input_dim = int(rng.integers(3, 8))
    hidden_dim = int(rng.integers(2, 7))
    latent_dim = int(rng.integers(1, input_dim))
    batch = int(rng.integers(1, 4))
    shapes = vae.param_shapes(input_dim, hidden_dim, latent_dim)
    arrays = {n: rng.uniform(-1.0, 1.0, size=s) for n, s in shapes.items()}
    arrays["b3"] = rng.uniform(-12.0, 3.0, size=shapes["b3"])
    p = vae.VaeParams(**arrays, strict_mu_relu=strict_mu_relu)
    shape = (input_dim,) if batch == 1 else (batch, input_dim)
    mask = rng.random(shape) < 0.6
    x = np.where(mask, rng.random(shape), 0.0)
    eps = rng.standard_normal(shape[:-1] + (latent_dim,))
    return p, x, mask, eps


def run(n_configs: int = 100, seed: int = 0, corrupt: str | None = None,
        strict_mu_relu: bool = False, kl_weight: float = 1.0) -> GradCheckReport:
    """Compare analytic and numeric gradients over ``n_configs`` random cases.

    ``corrupt`` names a parameter block whose analytic gradient is perturbed,
    as a negative control.
    """
    rng = np.random.default_rng(seed)
    worst = {n: 0.0 for n in vae.PARAM_NAMES}
    resampled = 0
    done = 0
    while done < n_configs:
        p, x, mask, eps = random_case(rng, strict_mu_relu)
        if near_kink(p, x, eps):
            resampled += 1
            continue
        inter = vae.total_loss(p, x, mask, eps=eps, kl_weight=kl_weight)
        analytic = vae.backward(p, x, mask, inter, kl_weight=kl_weight).arrays()
        if corrupt is not None:
            analytic[corrupt] = analytic[corrupt] * 1.01 + 1e-3
        numeric = numeric_gradient(p, x, mask, eps, kl_weight=kl_weight)
        for name in vae.PARAM_NAMES:
            err = rel_error(analytic[name], numeric[name])
            if err.size:
                worst[name] = max(worst[name], float(err.max()))
        done += 1
    return GradCheckReport(n_configs, worst, resampled)
