"""Discrete noise schedule and the forward / sample-prediction algebra.

The schedule tabulates the cumulative signal coefficient abar_t for
t in {0..total_steps}, with abar_0 = 1 and abar_t strictly decreasing.
All noising and clean-sample recovery math in the package goes through
the two coefficient arrays stored here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOTAL_STEPS = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012


def _scaled_linear_alpha_bars(total_steps: int, beta_start: float, beta_end: float) -> np.ndarray:
    # betas interpolated in sqrt space ("scaled linear"); product accumulated in float64
    betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), total_steps, dtype=np.float64) ** 2
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable table of abar_t plus the few-step inference grid.

    abar_t is stored in float64; elementwise image math keeps the dtype
    of its array arguments (float32 tensors stay float32).
    """

    total_steps: int = DEFAULT_TOTAL_STEPS
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        table = _scaled_linear_alpha_bars(self.total_steps, self.beta_start, self.beta_end)
        table.setflags(write=False)
        object.__setattr__(self, "alpha_bars", table)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 0 <= t <= self.total_steps:
            raise ValueError(f"timestep {t} outside [0, {self.total_steps}]")
        return t

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self._check_t(t)])

    def signal_coef(self, t: int) -> float:
        """sqrt(abar_t), the clean-image coefficient in the forward process."""
        return float(np.sqrt(self.alpha_bars[self._check_t(t)]))

    def noise_coef(self, t: int) -> float:
        """sqrt(1 - abar_t), the noise coefficient in the forward process."""
        return float(np.sqrt(1.0 - self.alpha_bars[self._check_t(t)]))

    def add_noise(self, x0, eps, t: int):
        """Noisy image sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps, elementwise."""
        if getattr(x0, "shape", None) != getattr(eps, "shape", None):
            raise ValueError(f"shape mismatch: x0 {getattr(x0, 'shape', None)} vs eps {getattr(eps, 'shape', None)}")
        t = self._check_t(t)
        return self.signal_coef(t) * x0 + self.noise_coef(t) * eps

    def predict_x0(self, x_t, eps_hat, t: int):
        """Clean-sample estimate (x_t - sqrt(1-abar_t)*eps_hat) / sqrt(abar_t).

        t = 0 is the degenerate identity case and returns x_t unchanged.
        """
        if getattr(x_t, "shape", None) != getattr(eps_hat, "shape", None):
            raise ValueError(
                f"shape mismatch: x_t {getattr(x_t, 'shape', None)} vs eps_hat {getattr(eps_hat, 'shape', None)}"
            )
        t = self._check_t(t)
        if t == 0:
            return x_t
        return (x_t - self.noise_coef(t) * eps_hat) / self.signal_coef(t)

    def grid(self, n_steps: int) -> list[int]:
        """Descending inference grid [total, total - total/n, ...], n entries."""
        return timestep_grid(n_steps, self.total_steps)

    def to_config(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "NoiseSchedule":
        return cls(
            total_steps=int(cfg.get("total_steps", DEFAULT_TOTAL_STEPS)),
            beta_start=float(cfg.get("beta_start", DEFAULT_BETA_START)),
            beta_end=float(cfg.get("beta_end", DEFAULT_BETA_END)),
        )


def timestep_grid(n_steps: int, total_steps: int = DEFAULT_TOTAL_STEPS) -> list[int]:
    """Uniformly spaced descending timesteps starting at total_steps.

    grid(4) = [1000, 750, 500, 250] for the default 1000-step table.
    """
    if n_steps <= 0:
        raise ValueError(f"step count must be positive, got {n_steps}")
    if total_steps % n_steps != 0:
        raise ValueError(f"step count {n_steps} must divide total_steps {total_steps}")
    stride = total_steps // n_steps
    return [total_steps - k * stride for k in range(n_steps)]
