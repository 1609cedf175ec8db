"""Discrete noise schedules and their sigma views.

Conventions used throughout:

* Training timesteps are ``t = 1..T`` with per-step variances ``beta_t`` and
  signal coefficients ``alpha_bar_t = prod_{s<=t}(1 - beta_s)``.  ``alpha_bar``
  decreases with ``t``; the terminal step is the noisiest.
* The variance-exploding (VE) view of a timestep is
  ``sigma_t = sqrt((1 - alpha_bar_t) / alpha_bar_t)``.  A zero-terminal-SNR
  (ZTSNR) schedule has ``alpha_bar_T = 0``, i.e. ``sigma_T = infinity``; in
  sigma tables the infinity is replaced by a large finite clamp.
* ``SNR = alpha_bar / (1 - alpha_bar) = 1 / sigma**2``, defined as exactly 0
  at ``alpha_bar = 0``.
* Sigma tables are ordered for sampling: descending, from the terminal
  (noisiest) step down to the first step.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import IdempotenceError, ParameterError

DEFAULT_TERMINAL_CLAMP = 20000.0
MIN_TERMINAL_CLAMP = 100.0


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    """A discrete variance-preserving noise schedule.

    ``ztsnr`` is true iff the terminal ``alpha_bar`` is exactly zero.
    Instances are immutable and safe to share between threads.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray
    ztsnr: bool = False

    def __post_init__(self):
        betas = _frozen_array(self.betas)
        alpha_bars = _frozen_array(self.alpha_bars)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        if betas.ndim != 1 or alpha_bars.ndim != 1 or len(betas) != len(alpha_bars):
            raise ParameterError("betas and alpha_bars must be 1-D and equally long")
        if len(betas) < 2:
            raise ParameterError("a schedule needs at least two timesteps")
        if not (np.all(betas > 0) and np.all(betas <= 1)):
            raise ParameterError("betas must lie in (0, 1]")
        if not np.all(np.diff(alpha_bars) < 0):
            raise ParameterError("alpha_bars must be strictly decreasing")
        if alpha_bars[0] <= 0 or alpha_bars[0] >= 1 or np.any(alpha_bars < 0):
            raise ParameterError("alpha_bars must lie in [0, 1) with alpha_bar_1 > 0")
        if self.ztsnr != (alpha_bars[-1] == 0.0):
            raise ParameterError("ztsnr flag must match whether the terminal alpha_bar is 0")

    @property
    def num_steps(self) -> int:
        return len(self.betas)

    def sigma_per_timestep(self, terminal_clamp: float = DEFAULT_TERMINAL_CLAMP) -> np.ndarray:
        """VE sigma for each timestep, ascending in t.

        Any non-finite sigma (from ``alpha_bar = 0``) is replaced by
        ``terminal_clamp``.
        """
        with np.errstate(divide="ignore"):
            sigmas = np.sqrt((1.0 - self.alpha_bars) / self.alpha_bars)
        return np.where(np.isfinite(sigmas), sigmas, float(terminal_clamp))

    def snr_per_timestep(self) -> np.ndarray:
        """SNR for each timestep, ascending in t; exactly 0 at ``alpha_bar = 0``."""
        return np.where(self.alpha_bars > 0, self.alpha_bars / (1.0 - self.alpha_bars), 0.0)


@dataclass(frozen=True)
class SigmaSchedule:
    """A descending table of VE noise levels.

    All entries are positive except that an inference schedule carries a final
    0 marker meaning "step to the fully denoised estimate".  For a table built
    from a ZTSNR schedule, ``sigmas[0] == terminal_clamp``.
    """

    sigmas: np.ndarray
    terminal_clamp: float = DEFAULT_TERMINAL_CLAMP

    def __post_init__(self):
        sigmas = _frozen_array(self.sigmas)
        object.__setattr__(self, "sigmas", sigmas)
        if sigmas.ndim != 1 or len(sigmas) < 2:
            raise ParameterError("a sigma schedule needs at least two entries")
        if not np.all(np.diff(sigmas) < 0):
            raise ParameterError("sigmas must be strictly decreasing")
        if np.any(sigmas[:-1] <= 0) or sigmas[-1] < 0:
            raise ParameterError("sigmas must be positive (only the final entry may be 0)")
        if not np.all(np.isfinite(sigmas)):
            raise ParameterError("sigmas must be finite; clamp the terminal step")

    def __len__(self) -> int:
        return len(self.sigmas)


def build_vp_schedule(
    num_steps: int = 1000,
    beta_start: float = 0.00085,
    beta_end: float = 0.012,
) -> NoiseSchedule:
    """Construct the discrete schedule with square-root-linear betas.

    ``sqrt(beta_t)`` is interpolated linearly from ``sqrt(beta_start)`` to
    ``sqrt(beta_end)``; ``alpha_bar`` is the running product of ``1 - beta``.
    With the defaults the terminal sigma is about 14.6.
    """
    if num_steps < 2:
        raise ParameterError("num_steps must be at least 2")
    if not (0 < beta_start <= beta_end < 1):
        raise ParameterError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start**0.5, beta_end**0.5, num_steps, dtype=np.float64) ** 2
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(betas=betas, alpha_bars=alpha_bars, ztsnr=False)


def rescale_to_ztsnr(schedule: NoiseSchedule) -> NoiseSchedule:
    """Rescale a schedule so the terminal step is pure noise.

    With ``s_t = sqrt(alpha_bar_t)``, the rescale is

        s'_t = s_1 * (s_t - s_T) / (s_1 - s_T)

    which keeps ``alpha_bar_1`` unchanged and sends ``alpha_bar_T`` to exactly
    zero.  Betas are recomputed from the rescaled products (the terminal beta
    becomes exactly 1).
    """
    if schedule.ztsnr:
        raise IdempotenceError("schedule already has zero terminal SNR")
    s = np.sqrt(schedule.alpha_bars)
    if s[0] <= s[-1]:
        raise ParameterError("alpha_bar_1 must exceed alpha_bar_T")
    s = s[0] * (s - s[-1]) / (s[0] - s[-1])
    alpha_bars = s**2
    alpha_bars[0] = schedule.alpha_bars[0]  # endpoint preserved to machine precision
    alpha_bars[-1] = 0.0
    alphas = np.empty_like(alpha_bars)
    alphas[0] = alpha_bars[0]
    alphas[1:] = alpha_bars[1:] / alpha_bars[:-1]
    return NoiseSchedule(betas=1.0 - alphas, alpha_bars=alpha_bars, ztsnr=True)


def sigma_view(
    schedule: NoiseSchedule,
    terminal_clamp: float = DEFAULT_TERMINAL_CLAMP,
) -> SigmaSchedule:
    """The descending VE sigma table of a schedule.

    Non-finite sigmas (ZTSNR terminal step) are replaced by ``terminal_clamp``,
    which must be at least 100 and must exceed the largest finite sigma so the
    table stays strictly decreasing.
    """
    if terminal_clamp < MIN_TERMINAL_CLAMP:
        raise ParameterError(f"terminal_clamp must be >= {MIN_TERMINAL_CLAMP}")
    sigmas = schedule.sigma_per_timestep(terminal_clamp)[::-1]
    if schedule.ztsnr and terminal_clamp <= sigmas[1]:
        raise ParameterError(
            f"terminal_clamp {terminal_clamp} must exceed the largest finite sigma {sigmas[1]:.6g}"
        )
    return SigmaSchedule(sigmas=sigmas, terminal_clamp=float(terminal_clamp))


def inference_indices(table_length: int, n_steps: int) -> np.ndarray:
    """Positions of an n-step selection over a table, endpoints included.

    Linear spacing rounded to the nearest index, ties half-up.
    """
    if not 2 <= n_steps <= table_length:
        raise ParameterError(f"n_steps must be in [2, {table_length}]")
    positions = np.linspace(0, table_length - 1, n_steps)
    return np.floor(positions + 0.5).astype(int)


def inference_sigmas(table: SigmaSchedule, n_steps: int) -> SigmaSchedule:
    """Select an n-step inference schedule from a full sigma table.

    The first entry is the table's noisiest sigma; a final 0 marker is
    appended as the last step's target.
    """
    indices = inference_indices(len(table.sigmas), n_steps)
    selected = np.append(table.sigmas[indices], 0.0)
    return SigmaSchedule(sigmas=selected, terminal_clamp=table.terminal_clamp)


def scale_sigma_max_for_resolution(sigma_max: float, ref_area: float, new_area: float) -> float:
    """Scale a maximum noise level to a new canvas area.

    Keeping SNR comparable across resolutions requires noise proportional to
    the canvas side length: quadrupling the area doubles sigma_max.
    """
    if ref_area <= 0 or new_area <= 0:
        raise ParameterError("areas must be positive")
    return float(sigma_max) * float(np.sqrt(new_area / ref_area))
