"""Input/output/skip preconditioning for velocity-objective denoisers.

A raw network ``F(input, sigma, cond)`` is wrapped into a clean-image denoiser

    D(x; sigma) = c_skip(sigma) * x + c_out(sigma) * F(c_in(sigma) * x; sigma)

with the velocity-parameterization scalings

    c_skip(sigma) = sigma_data**2 / (sigma**2 + sigma_data**2)
    c_out(sigma)  = -sigma * sigma_data / sqrt(sigma_data**2 + sigma**2)
    c_in(sigma)   = 1 / sqrt(sigma**2 + sigma_data**2)

Note the negative ``c_out``.  As ``sigma -> infinity`` these limits hold:
``c_skip -> 0``, ``c_out -> -sigma_data``, ``c_in * sigma -> 1``, so the
denoiser of a pure-noise input reduces to ``-sigma_data * F(n; sigma)`` with
``n`` the unit-variance noise factor.  That limit form never touches a
non-finite value and is exposed as :meth:`Preconditioner.denoise_infinite`.

All scalings are computed in double precision regardless of the tensor dtype;
at the terminal clamp ``sigma = 20000`` the intermediate ``sigma**2 = 4e8``
would already strain single precision.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, ParameterError


class RawNetwork(ABC):
    """A raw trainable network consumed through the preconditioner.

    ``sigma`` may be a scalar or a 1-D array matching the batch (leading)
    axis of ``scaled_input``.  Implementations must return an array of the
    same shape as ``scaled_input`` and be deterministic for fixed weights.
    """

    @abstractmethod
    def evaluate(self, scaled_input: np.ndarray, sigma, cond=None) -> np.ndarray: ...


class FunctionNetwork(RawNetwork):
    """Adapter turning a plain ``f(scaled_input, sigma, cond)`` into a RawNetwork."""

    def __init__(self, fn):
        self.fn = fn

    def evaluate(self, scaled_input, sigma, cond=None):
        return self.fn(scaled_input, sigma, cond)


def _broadcast(coef: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Reshape a per-sample coefficient vector against a batched tensor."""
    coef = np.asarray(coef, dtype=np.float64)
    if coef.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (np.ndim(like) - 1))


@dataclass(frozen=True)
class Preconditioner:
    """Sigma-dependent scalings around a raw network.

    ``sigma_data`` is the standard deviation of the training data in latent
    units.  Immutable; safe to share.
    """

    sigma_data: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma_data) and self.sigma_data > 0):
            raise ParameterError("sigma_data must be a positive finite real")

    def scalings(self, sigma):
        """``(c_skip, c_out, c_in)`` at a noise level (scalar or array).

        Raises for non-finite sigma: the infinite-noise limit has its own
        entry point, :meth:`denoise_infinite`.
        """
        sigma = np.asarray(sigma, dtype=np.float64)
        if not np.all(np.isfinite(sigma)):
            raise ParameterError("sigma must be finite; use denoise_infinite for the limit")
        if np.any(sigma < 0):
            raise ParameterError("sigma must be non-negative")
        sd2 = self.sigma_data**2
        denom = sigma**2 + sd2
        c_skip = sd2 / denom
        c_out = -sigma * self.sigma_data / np.sqrt(denom)
        c_in = 1.0 / np.sqrt(denom)
        return c_skip, c_out, c_in

    def denoise(self, network: RawNetwork, x: np.ndarray, sigma, cond=None) -> np.ndarray:
        """Clean-image estimate ``c_skip*x + c_out*F(c_in*x; sigma)``."""
        x = np.asarray(x, dtype=np.float64)
        c_skip, c_out, c_in = self.scalings(sigma)
        out = network.evaluate(_broadcast(c_in, x) * x, sigma, cond)
        out = np.asarray(out, dtype=np.float64)
        if out.shape != x.shape:
            raise ContractViolationError(
                f"network returned shape {out.shape}, expected {x.shape}"
            )
        return _broadcast(c_skip, x) * x + _broadcast(c_out, x) * out

    def denoise_infinite(self, network: RawNetwork, n: np.ndarray, sigma_cond, cond=None) -> np.ndarray:
        """Clean-image estimate at infinite noise: ``-sigma_data * F(n; sigma_cond)``.

        ``n`` is the unit-variance Gaussian factor of the initial noise, fed
        to the network unscaled; ``sigma_cond`` is the finite stand-in value
        used for the network's noise-level conditioning (the terminal clamp).
        """
        n = np.asarray(n, dtype=np.float64)
        out = np.asarray(network.evaluate(n, sigma_cond, cond), dtype=np.float64)
        if out.shape != n.shape:
            raise ContractViolationError(
                f"network returned shape {out.shape}, expected {n.shape}"
            )
        return -self.sigma_data * out

    def training_target(self, x0: np.ndarray, x_noised: np.ndarray, sigma) -> np.ndarray:
        """The raw-network output that makes ``denoise`` return ``x0`` exactly.

        Inverts the denoiser: ``(x0 - c_skip*x_noised) / c_out``.  Undefined
        at ``sigma = 0`` where ``c_out`` vanishes.
        """
        sigma_arr = np.asarray(sigma, dtype=np.float64)
        if np.any(sigma_arr == 0):
            raise ParameterError("no training target at sigma = 0 (c_out vanishes)")
        x0 = np.asarray(x0, dtype=np.float64)
        x_noised = np.asarray(x_noised, dtype=np.float64)
        c_skip, c_out, _ = self.scalings(sigma_arr)
        return (x0 - _broadcast(c_skip, x_noised) * x_noised) / _broadcast(c_out, x_noised)
