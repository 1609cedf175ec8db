"""A tiny fully-connected denoiser and its training loop.

The network is deliberately small — a few dense layers with tanh between
them, written out by hand (forward, backward, SGD) so the whole gradient
path is inspectable and exactly reproducible.  It consumes the
preconditioner's scaled input plus a ``log(sigma)/10`` noise-level feature,
and is trained against the velocity-style target that makes the wrapped
denoiser output the clean sample.

Timesteps are drawn uniformly.  On a zero-terminal-SNR schedule the terminal
step has ``alpha_bar = 0``, where the variance-exploding input scale is
undefined; those samples bypass the scaling entirely: the network sees the
unit-variance noise itself, conditioned on the terminal clamp sigma, and the
target is ``-x0 / sigma_data`` (the infinite-noise limit of the usual one).
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParameterError, TrainingDivergedError
from .precond import Preconditioner, RawNetwork
from .schedule import DEFAULT_TERMINAL_CLAMP, NoiseSchedule
from .tensorio import read_tensor, write_tensor

MINSNR_VARIANTS = ("standard", "ztsnr_safe")


def minsnr_weight(snr, gamma: float = 5.0, variant: str = "ztsnr_safe"):
    """Loss weight capping the influence of low-noise (high-SNR) steps.

    standard:    min(snr, gamma) / (snr + 1)
    ztsnr_safe:  (min(snr, gamma) + 1) / (snr + 1)

    The standard form is 0 at SNR = 0, which would silence the terminal step
    of a zero-terminal-SNR schedule — the one step it exists to teach — so
    the safe form (equal to 1 there) is the default.
    """
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    if variant not in MINSNR_VARIANTS:
        raise ParameterError(f"variant must be one of {MINSNR_VARIANTS}")
    snr = np.asarray(snr, dtype=np.float64)
    if np.any(snr < 0):
        raise ParameterError("snr must be non-negative")
    capped = np.minimum(snr, gamma)
    if variant == "standard":
        return capped / (snr + 1.0)
    return (capped + 1.0) / (snr + 1.0)


def tag_loss_weights(manifest, alpha: float = 0.5, clamp=(0.1, 10.0)) -> dict:
    """Per-sample loss weights downweighting overrepresented tags.

    Every tag belongs to a class (``item["tags"]`` maps class name to a tag
    list).  Within a class, a tag appearing in ``f`` samples gets weight
    ``clip((median_class_frequency / f) ** alpha, *clamp)``; a sample's
    weight is the mean over its tags, or 1 when it has none.
    """
    if not manifest:
        raise ParameterError("manifest is empty")
    if not 0 <= alpha <= 1:
        raise ParameterError("alpha must lie in [0, 1]")
    low, high = clamp
    if not 0 < low <= 1 <= high:
        raise ParameterError("clamp must satisfy 0 < low <= 1 <= high")

    freq = {}  # (class, tag) -> sample count
    for item in manifest:
        for cls, tags in item.get("tags", {}).items():
            for tag in set(tags):
                freq[(cls, tag)] = freq.get((cls, tag), 0) + 1
    medians = {}
    for cls in {c for c, _ in freq}:
        medians[cls] = float(np.median([n for (c, _), n in freq.items() if c == cls]))

    tag_w = {
        key: float(np.clip((medians[key[0]] / n) ** alpha, low, high))
        for key, n in freq.items()
    }
    weights = {}
    for item in manifest:
        ws = [tag_w[(cls, tag)]
              for cls, tags in item.get("tags", {}).items() for tag in tags]
        weights[item["id"]] = float(np.mean(ws)) if ws else 1.0
    return weights


class ToyNetwork(RawNetwork):
    """Dense tanh network with hand-written forward and backward passes.

    Input layout per row: ``[scaled_input, cond?, log(sigma)/10]``.  Weights
    start Glorot-normal, biases at zero.
    """

    def __init__(self, input_dim: int, cond_dim: int = 0, hidden=(64, 64), seed: int = 0):
        if input_dim < 1 or cond_dim < 0:
            raise ParameterError("need input_dim >= 1 and cond_dim >= 0")
        self.input_dim = input_dim
        self.cond_dim = cond_dim
        self.hidden = tuple(hidden)
        dims = [input_dim + cond_dim + 1, *self.hidden, input_dim]
        rng = np.random.default_rng(seed)
        self.weights = [rng.normal(0.0, np.sqrt(2.0 / (a + b)), (a, b))
                        for a, b in zip(dims[:-1], dims[1:])]
        self.biases = [np.zeros(b) for b in dims[1:]]

    def features(self, scaled_input: np.ndarray, sigma, cond=None) -> np.ndarray:
        """Assemble the network's input rows from batch, cond and sigma."""
        scaled_input = np.asarray(scaled_input, dtype=np.float64)
        if scaled_input.ndim != 2 or scaled_input.shape[1] != self.input_dim:
            raise ParameterError(
                f"expected a (batch, {self.input_dim}) input, got {scaled_input.shape}"
            )
        batch = len(scaled_input)
        sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise ParameterError("conditioning sigma must be positive and finite")
        sig_col = np.broadcast_to(np.log(sigma) / 10.0, (batch,)).reshape(batch, 1)
        cols = [scaled_input]
        if self.cond_dim:
            cond = None if cond is None else np.asarray(cond, dtype=np.float64)
            if cond is None or cond.shape != (batch, self.cond_dim):
                raise ParameterError(f"expected cond of shape ({batch}, {self.cond_dim})")
            cols.append(cond)
        elif cond is not None:
            raise ParameterError("network was built without a cond input")
        cols.append(sig_col)
        return np.concatenate(cols, axis=1)

    def forward(self, features: np.ndarray):
        """Return (output, activations); activations feed ``backward``."""
        acts = [features]
        h = features
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < len(self.weights) - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_output):
        """Gradients of the weights and biases given dLoss/dOutput."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        g = grad_output
        for i in reversed(range(len(self.weights))):
            grads_w[i] = acts[i].T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grads_w, grads_b

    def evaluate(self, scaled_input, sigma, cond=None):
        return self.forward(self.features(scaled_input, sigma, cond))[0]

    # -- parameter plumbing (gradient checks, serialization) ---------------

    def parameter_vector(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_parameter_vector(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        total = sum(W.size + b.size for W, b in zip(self.weights, self.biases))
        if vec.shape != (total,):
            raise ParameterError(f"parameter vector has shape {vec.shape}, expected ({total},)")
        pos = 0
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[pos:pos + W.size].reshape(W.shape).copy()
            pos += W.size
            self.biases[i] = vec[pos:pos + b.size].copy()
            pos += b.size

    def copy(self) -> "ToyNetwork":
        dup = ToyNetwork(self.input_dim, self.cond_dim, self.hidden, seed=0)
        dup.set_parameter_vector(self.parameter_vector())
        return dup


@dataclass(frozen=True)
class TrainConfig:
    schedule: NoiseSchedule
    learning_rate: float
    steps: int
    batch_size: int
    seed: int = 0
    minsnr_gamma: float = 5.0
    minsnr_variant: str = "ztsnr_safe"
    tag_weights: Optional[dict] = None  # sample index -> loss weight
    terminal_clamp: float = DEFAULT_TERMINAL_CLAMP

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.minsnr_gamma <= 0:
            raise ParameterError("minsnr_gamma must be positive")
        if self.steps < 0 or self.batch_size < 1:
            raise ParameterError("need steps >= 0 and batch_size >= 1")
        if self.minsnr_variant not in MINSNR_VARIANTS:
            raise ParameterError(f"minsnr_variant must be one of {MINSNR_VARIANTS}")


def train_toy(
    config: TrainConfig,
    data: np.ndarray,
    precond: Preconditioner,
    network: Optional[ToyNetwork] = None,
    loss_hook=None,
) -> ToyNetwork:
    """Train the toy denoiser with plain fixed-rate SGD.

    Each step draws a batch with replacement and a uniform timestep per
    sample, noises in the variance-exploding convention, and minimizes the
    per-element mean of ``weight * (F - target)**2``, where the weight is
    the MinSNR factor times the sample's tag weight.

    ``loss_hook(step, loss)`` is called once per step.  A non-finite loss
    aborts with the offending step index.  With ``steps = 0`` the network is
    returned untouched.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ParameterError("data must be a non-empty (samples, dims) array")
    n_samples, dim = data.shape
    net = network if network is not None else ToyNetwork(dim, seed=config.seed + 1)
    if net.input_dim != dim:
        raise ParameterError(f"network expects {net.input_dim}-dim samples, data has {dim}")

    sample_w = np.ones(n_samples)
    if config.tag_weights:
        for idx, w in config.tag_weights.items():
            sample_w[idx] = w

    alpha_bars = config.schedule.alpha_bars
    sigma_table = config.schedule.sigma_per_timestep(config.terminal_clamp)
    snr_table = config.schedule.snr_per_timestep()
    rng = np.random.default_rng(config.seed)

    for step in range(config.steps):
        picks = rng.integers(0, n_samples, config.batch_size)
        x0 = data[picks]
        t = rng.integers(0, config.schedule.num_steps, config.batch_size)
        eps = rng.standard_normal((config.batch_size, dim))

        sig = sigma_table[t]
        terminal = alpha_bars[t] == 0.0
        w = minsnr_weight(snr_table[t], config.minsnr_gamma, config.minsnr_variant)
        w = w * sample_w[picks]

        x = x0 + sig[:, None] * eps
        c_skip, c_out, c_in = precond.scalings(sig)
        net_in = np.where(terminal[:, None], eps, c_in[:, None] * x)
        target = np.where(terminal[:, None],
                          -x0 / precond.sigma_data,
                          (x0 - c_skip[:, None] * x) / c_out[:, None])

        out, acts = net.forward(net.features(net_in, sig))
        diff = out - target
        loss = float(np.mean(w[:, None] * diff**2))
        if not np.isfinite(loss):
            raise TrainingDivergedError(step)
        if loss_hook is not None:
            loss_hook(step, loss)

        grad_out = (2.0 / diff.size) * w[:, None] * diff
        grads_w, grads_b = net.backward(acts, grad_out)
        for i in range(len(net.weights)):
            net.weights[i] -= config.learning_rate * grads_w[i]
            net.biases[i] -= config.learning_rate * grads_b[i]
    return net


def gaussian_blob(mean, std: float, count: int, seed: int = 0) -> np.ndarray:
    """An isotropic Gaussian point cloud around ``mean``."""
    mean = np.asarray(mean, dtype=np.float64)
    if count < 1 or std < 0:
        raise ParameterError("need count >= 1 and std >= 0")
    rng = np.random.default_rng(seed)
    return mean + std * rng.standard_normal((count, len(mean)))


def save_toy(path, network: ToyNetwork, meta: Optional[dict] = None):
    """Write the network to ``path`` plus a ``.json`` layout sidecar."""
    write_tensor(path, network.parameter_vector())
    sidecar = {
        "input_dim": network.input_dim,
        "cond_dim": network.cond_dim,
        "hidden": list(network.hidden),
        "meta": meta or {},
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_toy(path):
    """Read a network written by :func:`save_toy`; returns (network, meta)."""
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    net = ToyNetwork(sidecar["input_dim"], sidecar["cond_dim"],
                     tuple(sidecar["hidden"]), seed=0)
    net.set_parameter_vector(read_tensor(path))
    return net, sidecar.get("meta", {})
