"""Pixel-space DDPM/DDIM scaffold with pluggable noise predictors.

Timesteps are 0-based: ``t`` runs over ``0..T-1`` and ``abar[-1]`` is taken
as 1. A predictor is any callable ``pred(z_t, f_c, f_s, t) -> Image``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .fusion import FeaturePyramid, build_pyramid, collapse_pyramid, gated_fuse
from .image import Image, as_image, check_same_shape

DEFAULT_T = 1000
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.array(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ParameterError("schedule needs at least one timestep")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ParameterError("betas must lie in (0, 1)")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        alphas = 1.0 - b
        abar = np.cumprod(alphas)
        alphas.setflags(write=False)
        abar.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "abar", abar)

    @property
    def T(self) -> int:
        return self.betas.size

    def abar_prev(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.abar[t - 1])

    def check_t(self, t: int):
        if not 0 <= t < self.T:
            raise ParameterError(f"timestep {t} outside [0, {self.T - 1}]")


def make_schedule(T: int = DEFAULT_T, beta_min: float | None = None,
                  beta_max: float | None = None) -> DiffusionSchedule:
    """Linear beta schedule.

    Omitted endpoints default to 1e-4 and 0.02 scaled by ``1000 / T`` (capped
    below 1), so short schedules still end near pure noise.
    """
    if T < 1:
        raise ParameterError("T must be >= 1")
    scale = DEFAULT_T / T
    if beta_min is None:
        beta_min = min(DEFAULT_BETA_MIN * scale, 0.5)
    if beta_max is None:
        beta_max = min(DEFAULT_BETA_MAX * scale, 0.999)
    if not 0 < beta_min <= beta_max < 1:
        raise ParameterError("need 0 < beta_min <= beta_max < 1")
    return DiffusionSchedule(np.linspace(beta_min, beta_max, T))


class EpsilonPredictor(Protocol):
    def __call__(self, z_t: Image, f_c: FeaturePyramid | None, f_s: FeaturePyramid | None,
                 t: int) -> Image: ...


def forward_noise(z0: Image, t: int, eps: Image, sched: DiffusionSchedule) -> Image:
    z0, eps = as_image(z0), as_image(eps)
    check_same_shape(z0, eps, "z0 and eps")
    sched.check_t(t)
    a = sched.abar[t]
    return Image(np.sqrt(a) * z0.data + np.sqrt(1.0 - a) * eps.data)


def predict_x0(z_t: Image, eps_hat: Image, t: int, sched: DiffusionSchedule) -> np.ndarray:
    a = float(sched.abar[t])
    if a <= 0:
        raise NumericError(f"abar[{t}] = 0; cannot recover the clean estimate")
    return (z_t.data - np.sqrt(1.0 - a) * eps_hat.data) / np.sqrt(a)


def reverse_step(z_t: Image, eps_hat: Image, t: int, sched: DiffusionSchedule,
                 eta: float = 0.0, seed: int | None = None) -> Image:
    """One DDIM step from ``t`` to ``t - 1``; ``eta = 1`` is DDPM ancestral sampling.

    At ``t = 0`` the clean estimate itself is returned.
    """
    z_t, eps_hat = as_image(z_t), as_image(eps_hat)
    check_same_shape(z_t, eps_hat, "z_t and eps_hat")
    sched.check_t(t)
    if not 0.0 <= eta <= 1.0:
        raise ParameterError("eta must lie in [0, 1]")
    x0 = predict_x0(z_t, eps_hat, t, sched)
    a_t, a_prev = float(sched.abar[t]), sched.abar_prev(t)
    if t == 0:
        return Image(x0)
    sigma = eta * np.sqrt((1.0 - a_prev) / (1.0 - a_t) * (1.0 - a_t / a_prev))
    direction = np.sqrt(max(1.0 - a_prev - sigma ** 2, 0.0)) * eps_hat.data
    out = np.sqrt(a_prev) * x0 + direction
    if sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + sigma * rng.standard_normal(out.shape)
    return Image(out)


def sample(pred: EpsilonPredictor, f_c, f_s, shape, sched: DiffusionSchedule,
           eta: float = 0.0, seed: int = 0, callback=None) -> Image:
    """Start from N(0, I) drawn from ``seed`` and step down to ``t = 0``."""
    rng = np.random.default_rng(seed)
    z = Image(rng.standard_normal(tuple(shape)))
    step_seeds = rng.integers(0, 2**63, size=sched.T)
    for t in range(sched.T - 1, -1, -1):
        eps_hat = pred(z, f_c, f_s, t)
        if eps_hat.shape != z.shape:
            raise ShapeError(f"predictor returned {eps_hat.shape} for input {z.shape}")
        z = reverse_step(z, eps_hat, t, sched, eta, int(step_seeds[t]))
        if callback is not None:
            callback(t, z)
    return z


def diffusion_loss(pred: EpsilonPredictor, z0: Image, f_c, f_s, sched: DiffusionSchedule,
                   seed: int = 0) -> float:
    """Single-draw estimate of E ||eps - pred(z_t, f_c, f_s, t)||^2 (mean over elements)."""
    z0 = as_image(z0)
    rng = np.random.default_rng(seed)
    t = int(rng.integers(0, sched.T))
    eps = Image(rng.standard_normal(z0.shape))
    eps_hat = pred(forward_noise(z0, t, eps, sched), f_c, f_s, t)
    return float(np.mean((eps.data - eps_hat.data) ** 2))


def diffusion_loss_batch(pred: EpsilonPredictor, z0: Image, f_c, f_s, sched: DiffusionSchedule,
                         seeds) -> float:
    return float(np.mean([diffusion_loss(pred, z0, f_c, f_s, sched, s) for s in seeds]))


class OraclePredictor:
    """Returns the exact noise consistent with ``z_t`` and a known clean target."""

    def __init__(self, target: Image, sched: DiffusionSchedule):
        self.target = as_image(target)
        self.sched = sched

    def __call__(self, z_t, f_c, f_s, t):
        a = self.sched.abar[t]
        return Image((z_t.data - np.sqrt(a) * self.target.data) / np.sqrt(1.0 - a))


class GaussianPredictor:
    """Posterior-mean noise predictor for data distributed as N(mu, sigma^2 I)."""

    def __init__(self, mu: Image, sigma: float, sched: DiffusionSchedule):
        if sigma < 0:
            raise ParameterError("prior sigma must be >= 0")
        self.mu = as_image(mu)
        self.sigma = float(sigma)
        self.sched = sched

    def __call__(self, z_t, f_c, f_s, t):
        a = self.sched.abar[t]
        gain = np.sqrt(1.0 - a) / (a * self.sigma ** 2 + 1.0 - a)
        return Image((z_t.data - np.sqrt(a) * self.mu.data) * gain)


class ConstantPredictor:
    def __init__(self, value: float = 0.0):
        self.value = value

    def __call__(self, z_t, f_c, f_s, t):
        return Image(np.full(z_t.shape, self.value))


class FusedPredictor:
    """Routes ``z_t`` through ``collapse(gated_fuse(build(z_t), f_c, f_s))`` before ``base``."""

    def __init__(self, base: EpsilonPredictor, f_c: FeaturePyramid, f_s: FeaturePyramid):
        if len(f_c) != len(f_s):
            raise ShapeError("color and structure pyramids differ in depth")
        self.base = base
        self.f_c = f_c
        self.f_s = f_s

    def fuse(self, z_t: Image) -> Image:
        z_t = as_image(z_t)
        if (z_t.height, z_t.width) != (self.f_c[0].height, self.f_c[0].width):
            raise ShapeError("conditioning pyramids do not match z_t")
        return collapse_pyramid(gated_fuse(build_pyramid(z_t, len(self.f_c)), self.f_c, self.f_s))

    def __call__(self, z_t, f_c=None, f_s=None, t=0):
        return self.base(self.fuse(z_t), self.f_c, self.f_s, t)


def fused_predictor(base: EpsilonPredictor, f_c: FeaturePyramid, f_s: FeaturePyramid) -> FusedPredictor:
    return FusedPredictor(base, f_c, f_s)
