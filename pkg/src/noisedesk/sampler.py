"""Euler sampling over a sigma table, with an analytic infinite-noise first step.

The Euler step from ``sigma_from`` down to ``sigma_to`` is

    x' = x + (sigma_to - sigma_from) * (x - D(x; sigma_from)) / sigma_from

For a zero-terminal-SNR schedule the first step would start at
``sigma = infinity``; algebraically the step collapses to

    x_1 = sigma_1 * n + D_infinity = sigma_1 * n - sigma_data * F(n; sigma_0)

which contains no non-finite term.  After that step a conventional Euler loop
takes over; the infinite step is never folded into any multistep history.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ScheduleOrderError
from .precond import Preconditioner, RawNetwork
from .schedule import DEFAULT_TERMINAL_CLAMP, SigmaSchedule


@dataclass(frozen=True)
class SamplerConfig:
    """Inference settings: sigma table, first-step mode, guidance, seed."""

    sigmas: SigmaSchedule
    ztsnr_first_step: bool = False
    cfg_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.cfg_scale < 1.0:
            raise ParameterError("cfg_scale must be >= 1")
        if self.ztsnr_first_step and self.sigmas.sigmas[0] != self.sigmas.terminal_clamp:
            raise ParameterError(
                "ztsnr_first_step requires a schedule starting at the terminal clamp"
            )


def euler_step(x: np.ndarray, denoised: np.ndarray, sigma_from: float, sigma_to: float) -> np.ndarray:
    """One Euler step from ``sigma_from`` down to ``sigma_to``.

    ``sigma_to = 0`` lands exactly on the denoised estimate.
    """
    if not np.isfinite(sigma_from):
        raise ParameterError("sigma_from must be finite; use ztsnr_first_step instead")
    if sigma_to < 0 or sigma_from <= sigma_to:
        raise ScheduleOrderError(f"need sigma_from > sigma_to >= 0, got {sigma_from} -> {sigma_to}")
    x = np.asarray(x, dtype=np.float64)
    denoised = np.asarray(denoised, dtype=np.float64)
    if sigma_to == 0:
        return denoised.copy()
    return x + (sigma_to - sigma_from) * (x - denoised) / sigma_from


def ztsnr_first_step(
    n: np.ndarray,
    sigma_next: float,
    precond: Preconditioner,
    network: RawNetwork,
    cond=None,
    sigma_cond: float = DEFAULT_TERMINAL_CLAMP,
) -> np.ndarray:
    """The analytic first step from infinite noise down to ``sigma_next``.

    ``n`` is the standard-Gaussian noise factor (never scaled by the infinite
    sigma); ``sigma_cond`` is the finite conditioning value handed to the
    network for this step.
    """
    n = np.asarray(n, dtype=np.float64)
    return sigma_next * n + precond.denoise_infinite(network, n, sigma_cond, cond)


def sample(
    config: SamplerConfig,
    precond: Preconditioner,
    network: RawNetwork,
    cond=None,
    uncond=None,
    *,
    shape: tuple[int, ...] | None = None,
    x_init: np.ndarray | None = None,
    start_index: int = 0,
    denoised_hook=None,
) -> np.ndarray:
    """Run the Euler sampler and return the final latent.

    Without ``x_init`` the trajectory starts from seeded Gaussian noise at
    ``sigmas[0]`` (or from the analytic infinite-noise step when
    ``config.ztsnr_first_step`` is set).  With ``x_init`` the trajectory
    starts at ``sigmas[start_index]`` from ``x_init + sigma_start * n``
    (img2img-style entry; the infinite-noise step is skipped).

    With ``cfg_scale > 1`` each denoised estimate is the guided blend
    ``d_u + cfg_scale * (d_c - d_u)``; both conditions must then be supplied.

    ``denoised_hook(step_index, sigma, denoised)`` is called once per sampler
    step with the (possibly guided) estimate, infinite-noise step included.
    """
    sigmas = config.sigmas.sigmas
    guided = config.cfg_scale > 1.0
    if guided and (cond is None or uncond is None):
        raise ParameterError("guidance with cfg_scale > 1 needs both cond and uncond")
    if not 0 <= start_index < len(sigmas) - 1:
        raise ParameterError("start_index out of range")

    def denoised_estimate(x, sigma):
        d = precond.denoise(network, x, sigma, cond)
        if guided:
            d_u = precond.denoise(network, x, sigma, uncond)
            d = d_u + config.cfg_scale * (d - d_u)
        return d

    rng = np.random.default_rng(config.seed)
    if x_init is not None:
        x_init = np.asarray(x_init, dtype=np.float64)
        n = rng.standard_normal(x_init.shape)
        x = x_init + sigmas[start_index] * n
        first = start_index
    else:
        if shape is None:
            raise ParameterError("either shape or x_init is required")
        if start_index != 0:
            raise ParameterError("start_index > 0 requires x_init")
        n = rng.standard_normal(shape)
        if config.ztsnr_first_step:
            d_inf = precond.denoise_infinite(network, n, config.sigmas.terminal_clamp, cond)
            if guided:
                d_inf_u = precond.denoise_infinite(network, n, config.sigmas.terminal_clamp, uncond)
                d_inf = d_inf_u + config.cfg_scale * (d_inf - d_inf_u)
            if denoised_hook is not None:
                denoised_hook(0, sigmas[0], d_inf)
            x = sigmas[1] * n + d_inf
            first = 1
        else:
            x = sigmas[0] * n
            first = 0

    for i in range(first, len(sigmas) - 1):
        d = denoised_estimate(x, sigmas[i])
        if denoised_hook is not None:
            denoised_hook(i, sigmas[i], d)
        x = euler_step(x, d, sigmas[i], sigmas[i + 1])
    return x
