"""Noise-to-crop-parameter generator and its adversarial training plumbing.

The generator is a deliberately small two-layer perceptron without biases:
``unit = sigmoid(W2 @ relu(W1 @ noise))`` with noise drawn uniformly from
[0, 1).  Because freshly initialised weights are tiny, the pre-sigmoid
outputs start near zero and every unit parameter starts near 0.5 — the two
crop branches therefore begin almost identical and drift apart only as the
adversarial signal pushes them.

The generator maximises the contrastive loss; rather than special-casing an
ascent optimiser, callers negate the incoming gradient with
:func:`reverse_gradient` and reuse ordinary SGD descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor
from .affine import ParamBounds
from .errors import ConfigError, TensorFileError, TrainingError
from .kv import format_kv, parse_kv

DEFAULT_NOISE_DIM = 16
DEFAULT_HIDDEN_DIM = 32
WEIGHT_INIT_SCALE = 0.01


@dataclass(frozen=True)
class CropperState:
    """Weights of one crop-parameter generator plus its clamping bounds."""

    w1: np.ndarray  # (hidden_dim, noise_dim)
    w2: np.ndarray  # (6, hidden_dim)
    bounds: ParamBounds

    @property
    def noise_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def initialise(
        cls,
        rng: np.random.Generator,
        noise_dim: int = DEFAULT_NOISE_DIM,
        hidden_dim: int = DEFAULT_HIDDEN_DIM,
        bounds: ParamBounds | None = None,
        init_scale: float = WEIGHT_INIT_SCALE,
    ) -> "CropperState":
        """Small-uniform random init so raw outputs start near zero."""
        if noise_dim < 1 or hidden_dim < 1:
            raise ConfigError(
                f"noise_dim and hidden_dim must be >= 1, "
                f"got {noise_dim} and {hidden_dim}"
            )
        w1 = rng.uniform(-init_scale, init_scale, size=(hidden_dim, noise_dim))
        w2 = rng.uniform(-init_scale, init_scale, size=(6, hidden_dim))
        return cls(w1=w1, w2=w2, bounds=bounds or ParamBounds())


@dataclass(frozen=True)
class MlpCache:
    """Forward intermediates needed by :func:`mlp_backward`."""

    noise: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    unit: np.ndarray


def sample_noise(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Draw one noise vector uniformly from [0, 1)^dim."""
    if dim < 1:
        raise ConfigError(f"noise dimension must be >= 1, got {dim}")
    return rng.random(dim)


def mlp_forward(noise: np.ndarray, state: CropperState) -> tuple[np.ndarray, MlpCache]:
    """Map a noise vector to six unit-interval crop parameters."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (state.noise_dim,):
        raise ConfigError(
            f"noise shape {noise.shape} does not match generator input "
            f"({state.noise_dim},)"
        )
    hidden_pre = state.w1 @ noise
    hidden = tensor.elementwise("relu", hidden_pre)
    unit = tensor.elementwise("sigmoid", state.w2 @ hidden)
    return unit, MlpCache(noise=noise, hidden_pre=hidden_pre,
                          hidden=hidden, unit=unit)


def mlp_backward(
    grad_unit: np.ndarray, cache: MlpCache, state: CropperState
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the generator weights given a gradient on the outputs.

    Returns ``(grad_w1, grad_w2)``.  The ReLU subgradient at exactly zero is
    taken as zero.
    """
    grad_unit = np.asarray(grad_unit, dtype=np.float64)
    v = cache.unit
    grad_raw = grad_unit * v * (1.0 - v)          # through the sigmoid
    grad_w2 = np.outer(grad_raw, cache.hidden)
    grad_hidden = state.w2.T @ grad_raw
    grad_pre = grad_hidden * (cache.hidden_pre > 0.0)
    grad_w1 = np.outer(grad_pre, cache.noise)
    return grad_w1, grad_w2


def reverse_gradient(grad: np.ndarray) -> np.ndarray:
    """Exact sign flip (identity forward is implicit upstream).

    Negation is exact in IEEE-754, so descending on the reversed gradient is
    bit-for-bit identical to ascending on the original.
    """
    return -np.asarray(grad, dtype=np.float64)


@dataclass
class SgdMomentum:
    """Classic momentum SGD over a named parameter dict.

    velocity = momentum * velocity + grad;  param -= lr * velocity
    """

    lr: float
    momentum: float = 0.9
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def step(
        self,
        params: dict[str, np.ndarray],
        grads: dict[str, np.ndarray],
        step_index: int | None = None,
    ) -> dict[str, np.ndarray]:
        """Return updated parameters; velocities persist on the optimiser."""
        out: dict[str, np.ndarray] = {}
        for name, value in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            if not np.all(np.isfinite(g)):
                where = "" if step_index is None else f" at step {step_index}"
                raise TrainingError(f"non-finite gradient for '{name}'{where}")
            vel = self.velocities.get(name)
            vel = g if vel is None else self.momentum * vel + g
            self.velocities[name] = vel
            out[name] = value - self.lr * vel
        return out


def update_weights(
    state: CropperState,
    grad_w1: np.ndarray,
    grad_w2: np.ndarray,
    optimiser: SgdMomentum,
    step_index: int | None = None,
) -> CropperState:
    """One optimiser step on a generator; returns the new state."""
    updated = optimiser.step(
        {"w1": state.w1, "w2": state.w2},
        {"w1": grad_w1, "w2": grad_w2},
        step_index=step_index,
    )
    return CropperState(w1=updated["w1"], w2=updated["w2"], bounds=state.bounds)


def save_checkpoint(
    state: CropperState, directory: str | Path, seed: int | None = None
) -> None:
    """Persist generator weights plus a small text manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensor.save_tensor(directory / "w1.pct", state.w1)
    tensor.save_tensor(directory / "w2.pct", state.w2)
    b = state.bounds
    manifest: dict[str, object] = {
        "noise_dim": state.noise_dim,
        "hidden_dim": state.hidden_dim,
        "spatial_scale_min": b.spatial_scale_range[0],
        "spatial_scale_max": b.spatial_scale_range[1],
        "temporal_scale_min": b.temporal_scale_range[0],
        "temporal_scale_max": b.temporal_scale_range[1],
        "angle_min": b.angle_range[0],
        "angle_max": b.angle_range[1],
        "detach_bound": b.detach_bound,
    }
    if seed is not None:
        manifest["seed"] = seed
    (directory / "manifest.txt").write_text(format_kv(manifest))


def load_checkpoint(directory: str | Path) -> tuple[CropperState, dict[str, str]]:
    """Load a checkpoint written by :func:`save_checkpoint`.

    Returns the reconstructed state and the raw manifest key/value pairs.
    """
    directory = Path(directory)
    w1 = tensor.load_tensor(directory / "w1.pct")
    w2 = tensor.load_tensor(directory / "w2.pct")
    raw = parse_kv((directory / "manifest.txt").read_text())
    try:
        noise_dim = int(raw["noise_dim"])
        hidden_dim = int(raw["hidden_dim"])
        bounds = ParamBounds(
            spatial_scale_range=(
                float(raw["spatial_scale_min"]), float(raw["spatial_scale_max"])
            ),
            temporal_scale_range=(
                float(raw["temporal_scale_min"]), float(raw["temporal_scale_max"])
            ),
            angle_range=(float(raw["angle_min"]), float(raw["angle_max"])),
            detach_bound=float(raw["detach_bound"]),
        )
    except KeyError as exc:
        raise ConfigError(f"checkpoint manifest missing key {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"checkpoint manifest malformed: {exc}") from exc
    if w1.shape != (hidden_dim, noise_dim) or w2.shape != (6, hidden_dim):
        raise TensorFileError(
            f"checkpoint weight shapes {w1.shape}/{w2.shape} disagree with "
            f"manifest dims m={noise_dim}, d={hidden_dim}"
        )
    return CropperState(w1=w1, w2=w2, bounds=bounds), raw
