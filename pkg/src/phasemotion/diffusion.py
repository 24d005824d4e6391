"""DDIM noise schedule, deterministic sampler steps, and phase mixing.

The sampler is the eta=0 DDIM variant: every step maps a noisy latent and
a noise prediction to (previous-step latent, clean-latent estimate). The
clean estimate at step index -1 (no noising steps applied) is the latent
itself, which is the terminal step of the inference subsequence.

Phase mixing combines directional noise predictions with a semantic one:

    eps = r * mean(directional) + (1 - r) * semantic,   r = (k / K)^3

for conditioned segments over the inference-step index k, and r = 1 for
unconditioned (transitional) segments. Because the clean-latent estimate
is affine in the noise prediction at fixed (latent, step), mixing in
noise space and mixing in clean-latent space agree exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DiffusionSchedule:
    k_train: int
    k_infer: int
    betas: np.ndarray       # [k_train], strictly inside (0, 1), nondecreasing
    alpha_bar: np.ndarray   # [k_train], strictly decreasing, in (0, 1]
    timesteps: np.ndarray   # [k_infer], descending inference subsequence

    def alpha_bar_at(self, k: int) -> float:
        """Cumulative alpha; index -1 means "no noising steps" and is 1."""
        if k == -1:
            return 1.0
        if not 0 <= k < self.k_train:
            raise IndexError(f"step {k} outside [0, {self.k_train})")
        return float(self.alpha_bar[k])

    def step_pairs(self) -> list[tuple[int, int]]:
        """(k, k_prev) pairs walked by the sampler; final k_prev is -1."""
        ts = list(self.timesteps)
        return list(zip(ts, ts[1:] + [-1]))

    def config(self) -> dict:
        return {"k_train": self.k_train, "k_infer": self.k_infer,
                "beta_start": float(self.betas[0]), "beta_end": float(self.betas[-1]),
                "beta_ramp": "linear"}


def make_schedule(k_train: int = 1000, k_infer: int = 100,
                  beta_start: float = 1e-4, beta_end: float = 2e-2) -> DiffusionSchedule:
    if k_train < 1:
        raise ValueError("k_train must be >= 1")
    if not 1 <= k_infer <= k_train:
        raise ValueError("need 1 <= k_infer <= k_train")
    if k_train == 1:
        betas = np.array([beta_start])
    else:
        betas = np.linspace(beta_start, beta_end, k_train)
    alpha_bar = np.cumprod(1.0 - betas)
    stride = k_train // k_infer
    timesteps = np.arange(k_infer - 1, -1, -1) * stride
    return DiffusionSchedule(k_train=k_train, k_infer=k_infer, betas=betas,
                             alpha_bar=alpha_bar, timesteps=timesteps)


def add_noise(p0: np.ndarray, eps: np.ndarray, k: int,
              sched: DiffusionSchedule) -> np.ndarray:
    """Forward diffusion: sqrt(abar_k) * p0 + sqrt(1 - abar_k) * eps."""
    ab = sched.alpha_bar_at(k)
    return np.sqrt(ab) * p0 + np.sqrt(1.0 - ab) * eps


def eps_to_x0(pk: np.ndarray, eps_hat: np.ndarray, k: int,
              sched: DiffusionSchedule) -> np.ndarray:
    """Invert the forward map: clean-latent estimate from a noise estimate."""
    ab = sched.alpha_bar_at(k)
    return (pk - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def ddim_step(pk: np.ndarray, eps_hat: np.ndarray, k: int, k_prev: int,
              sched: DiffusionSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic DDIM update; returns (previous latent, clean estimate)."""
    if not k_prev < k:
        raise ValueError(f"k_prev {k_prev} must be below k {k}")
    x0_hat = eps_to_x0(pk, eps_hat, k, sched)
    ab_prev = sched.alpha_bar_at(k_prev)
    p_prev = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat
    return p_prev, x0_hat


@dataclass(frozen=True)
class MixWeight:
    r: float
    conditioned: bool


def mixing_weight(k_index: int, k_infer: int, conditioned: bool) -> MixWeight:
    """Cubic ramp over the inference-step index for conditioned segments."""
    if not 0 <= k_index <= k_infer:
        raise ValueError(f"k_index {k_index} outside [0, {k_infer}]")
    r = (k_index / k_infer) ** 3 if conditioned else 1.0
    return MixWeight(r=r, conditioned=conditioned)


def phase_mix(eps_f: np.ndarray | None, eps_b: np.ndarray | None,
              eps_c: np.ndarray | None, weight: MixWeight) -> np.ndarray:
    """Combine directional and semantic noise predictions.

    The directional term is the mean of whichever of (forward, backward)
    exists; a single neighbor stands in for the mean. Without a semantic
    prediction the weight is forced to 1.
    """
    directional = [e for e in (eps_f, eps_b) if e is not None]
    if not directional and eps_c is None:
        raise ValueError("phase_mix needs at least one prediction")
    if not directional:
        return np.array(eps_c, copy=True)
    d = directional[0] if len(directional) == 1 else 0.5 * (directional[0] + directional[1])
    if eps_c is None:
        return np.array(d, copy=True)
    r = weight.r
    return r * d + (1.0 - r) * eps_c
