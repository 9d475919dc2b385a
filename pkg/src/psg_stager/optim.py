"""Adam optimizer with step-decay learning rate, coupled L2 weight decay,
and fan-in variance-scaled initialization."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError


@dataclass
class OptimConfig:
    alpha0: float = 1e-3
    decay_every: int = 50_000
    decay_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 1e-4

    def validate(self) -> None:
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1/beta2 must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")


def lr_at(step: int, config: OptimConfig) -> float:
    """Piecewise-constant rate: alpha0 scaled by decay_factor once per
    completed decay_every steps.

    Iterated multiplication keeps the decade values exact in binary floats
    (1e-3 * 0.1**2 rounds away from 1e-5; 1e-3 * 0.1 * 0.1 does not).
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    lr = config.alpha0
    for _ in range(step // config.decay_every):
        lr *= config.decay_factor
        if lr == 0.0:
            break
    return lr


class OptimState:
    """First/second moment accumulators plus the global step counter."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimState,
    config: OptimConfig,
    decay_filter=None,
) -> None:
    """One bias-corrected Adam update, applied to params in place.

    Weight decay is coupled: lambda * w is added to the gradient before the
    moment update, but only for tensors accepted by decay_filter (by default
    names ending in ".weight", i.e. conv/dense kernels; scales, shifts and
    biases are exempt).
    """
    if decay_filter is None:
        decay_filter = lambda name: name.endswith(".weight")

    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape "
                f"{params[name].shape} for {name!r}"
            )

    lr = lr_at(state.step, config)
    state.step += 1
    t = state.step
    c1 = 1.0 - config.beta1**t
    c2 = 1.0 - config.beta2**t

    for name, w in params.items():
        g = grads[name]
        if config.weight_decay > 0.0 and decay_filter(name):
            g = g + g.dtype.type(config.weight_decay) * w
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * np.square(g)
        w -= (lr / c1) * m / (np.sqrt(v / c2) + config.adam_epsilon)


def variance_scaling_init(
    shape: tuple[int, ...],
    fan_in: int,
    seed: int | np.random.Generator,
) -> np.ndarray:
    """Truncated-normal draws with final variance 2/fan_in.

    Samples are redrawn until they land within two standard deviations, and
    the pre-truncation sigma is widened so the truncated distribution still
    has the target variance.
    """
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    target_var = 2.0 / fan_in
    # variance of a standard normal truncated to [-2, 2]
    phi2 = math.exp(-2.0) / math.sqrt(2.0 * math.pi)
    mass = math.erf(2.0 / math.sqrt(2.0))
    trunc_factor = 1.0 - 4.0 * phi2 / mass
    sigma = math.sqrt(target_var / trunc_factor)

    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * sigma
