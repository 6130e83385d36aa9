"""Crop parameterisation: unit-interval params -> affine matrix -> sampling grid.

A crop is described by six numbers in canonical order: spatial scale, temporal
scale, in-plane angle, and the three centre offsets (x, y, t).  A generator
emits them as raw values in (0, 1) ("unit params"); :func:`clamp_params` maps
them into their admissible physical ranges, where the offset ranges depend on
the already-mapped scales so that the crop cube can never leave the normalised
[-1, 1] extent of the source clip.

Everything here is differentiable by hand: each forward op has a matching
``*_backward`` that propagates loss gradients with plain ndarray arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

# Indices into a unit-parameter (or parameter-gradient) vector of length 6.
SPATIAL_SCALE, TEMPORAL_SCALE, ANGLE, OFFSET_X, OFFSET_Y, OFFSET_T = range(6)

PARAM_NAMES = ("sp", "st", "theta", "dx", "dy", "dt")


@dataclass(frozen=True)
class ParamBounds:
    """Static admissible ranges for scales and angle, plus the detach band.

    Offset ranges are intentionally absent: they are recomputed from the
    mapped scales (a crop of scale ``s`` centred at offset ``d`` spans
    ``[d - s, d + s]``, so ``|d| <= 1 - s`` keeps it inside the clip).

    Parameters
    ----------
    spatial_scale_range, temporal_scale_range : (float, float)
        Half-extent ranges; minima must be strictly positive.
    angle_range : (float, float)
        In-plane rotation range in radians.  Default pins the angle to zero.
    detach_bound : float
        Early-stopping band half-width in [0, 0.5].  0 disables early
        stopping entirely; 0.5 stops every gradient.
    """

    spatial_scale_range: tuple[float, float] = (0.5, 1.0)
    temporal_scale_range: tuple[float, float] = (0.5, 1.0)
    angle_range: tuple[float, float] = (0.0, 0.0)
    detach_bound: float = 0.2

    def __post_init__(self) -> None:
        for name in ("spatial_scale_range", "temporal_scale_range", "angle_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ConfigError(f"{name}: need finite min <= max, got ({lo}, {hi})")
        for name in ("spatial_scale_range", "temporal_scale_range"):
            lo, hi = getattr(self, name)
            if lo <= 0.0:
                raise ConfigError(f"{name}: scale minimum must be positive")
            if hi > 1.0:
                raise ConfigError(
                    f"{name}: scale maximum must not exceed 1 (crops must fit "
                    f"inside the source), got {hi}"
                )
        if not 0.0 <= self.detach_bound <= 0.5:
            raise ConfigError(
                f"detach_bound must lie in [0, 0.5], got {self.detach_bound}"
            )

    def offset_bounds(
        self, spatial_scale: float, temporal_scale: float
    ) -> tuple[tuple[float, float], tuple[float, float]]:
        """Dynamic (min, max) pairs for the spatial and temporal offsets."""
        return (
            (spatial_scale - 1.0, 1.0 - spatial_scale),
            (temporal_scale - 1.0, 1.0 - temporal_scale),
        )


@dataclass(frozen=True)
class AffineParams:
    """Physical crop parameters after interval mapping."""

    spatial_scale: float
    temporal_scale: float
    angle: float
    dx: float
    dy: float
    dt: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.spatial_scale, self.temporal_scale, self.angle,
             self.dx, self.dy, self.dt]
        )


def _check_unit(unit_params: np.ndarray) -> np.ndarray:
    v = np.asarray(unit_params, dtype=np.float64)
    if v.shape != (6,):
        raise DimensionError(f"unit params must have shape (6,), got {v.shape}")
    return v


def apply_early_stop(
    unit_params: np.ndarray, detach_bound: float
) -> tuple[np.ndarray, np.ndarray]:
    """Early-stopping mask for near-saturated unit params.

    A coordinate further than ``0.5 - detach_bound`` from the midpoint 0.5 is
    considered converged: its value passes through unchanged but its mask
    entry is False, which downstream zeroes the gradient flowing back into
    the generator for that coordinate.

    Returns
    -------
    (values, mask)
        ``values`` is the input unchanged; ``mask`` is a boolean (6,) array,
        True where the gradient should still flow.
    """
    if not 0.0 <= detach_bound <= 0.5:
        raise ConfigError(f"detach_bound must lie in [0, 0.5], got {detach_bound}")
    v = _check_unit(unit_params)
    mask = np.abs(v - 0.5) <= 0.5 - detach_bound
    return v, mask


def clamp_params(unit_params: np.ndarray, bounds: ParamBounds) -> AffineParams:
    """Map unit params into physical ranges (offsets use scale-aware bounds).

    Scales and angle are mapped affinely by their static ranges; offsets are
    then mapped by ``[scale - 1, 1 - scale]`` using the freshly mapped scales,
    which guarantees containment of the crop cube for zero angle.
    """
    v = _check_unit(unit_params)
    sp_lo, sp_hi = bounds.spatial_scale_range
    st_lo, st_hi = bounds.temporal_scale_range
    an_lo, an_hi = bounds.angle_range
    sp = sp_lo + v[SPATIAL_SCALE] * (sp_hi - sp_lo)
    st = st_lo + v[TEMPORAL_SCALE] * (st_hi - st_lo)
    angle = an_lo + v[ANGLE] * (an_hi - an_lo)
    (dx_lo, dx_hi), (dt_lo, dt_hi) = bounds.offset_bounds(sp, st)
    dx = dx_lo + v[OFFSET_X] * (dx_hi - dx_lo)
    dy = dx_lo + v[OFFSET_Y] * (dx_hi - dx_lo)
    dt = dt_lo + v[OFFSET_T] * (dt_hi - dt_lo)
    return AffineParams(float(sp), float(st), float(angle),
                        float(dx), float(dy), float(dt))


def clamp_params_backward(
    grad_params: np.ndarray,
    unit_params: np.ndarray,
    bounds: ParamBounds,
    mask: np.ndarray,
) -> np.ndarray:
    """Backpropagate through :func:`clamp_params`.

    The offset ranges depend on the scales, so the scale coordinates collect
    extra terms from the offsets that they bound.  With scale span ``a``,
    offset unit value ``u`` and offset ``d = (s - 1) + u * 2 * (1 - s)``:
    ``dd/ds = 1 - 2u`` and ``dd/du = 2 * (1 - s)``.

    Parameters
    ----------
    grad_params : (6,) ndarray
        Loss gradient w.r.t. the mapped parameters, canonical order.
    unit_params : (6,) ndarray
        The raw values originally passed to :func:`clamp_params`.
    mask : (6,) boolean ndarray
        Early-stop mask; masked-out coordinates get zero gradient.

    Returns
    -------
    (6,) ndarray
        Loss gradient w.r.t. the unit params.
    """
    g = np.asarray(grad_params, dtype=np.float64)
    if g.shape != (6,):
        raise DimensionError(f"grad params must have shape (6,), got {g.shape}")
    v = _check_unit(unit_params)
    m = np.asarray(mask)
    if m.shape != (6,):
        raise DimensionError(f"mask must have shape (6,), got {m.shape}")
    sp_lo, sp_hi = bounds.spatial_scale_range
    st_lo, st_hi = bounds.temporal_scale_range
    an_lo, an_hi = bounds.angle_range
    sp_span = sp_hi - sp_lo
    st_span = st_hi - st_lo
    sp = sp_lo + v[SPATIAL_SCALE] * sp_span
    st = st_lo + v[TEMPORAL_SCALE] * st_span

    out = np.zeros(6)
    out[SPATIAL_SCALE] = sp_span * (
        g[SPATIAL_SCALE]
        + g[OFFSET_X] * (1.0 - 2.0 * v[OFFSET_X])
        + g[OFFSET_Y] * (1.0 - 2.0 * v[OFFSET_Y])
    )
    out[TEMPORAL_SCALE] = st_span * (
        g[TEMPORAL_SCALE] + g[OFFSET_T] * (1.0 - 2.0 * v[OFFSET_T])
    )
    out[ANGLE] = (an_hi - an_lo) * g[ANGLE]
    out[OFFSET_X] = 2.0 * (1.0 - sp) * g[OFFSET_X]
    out[OFFSET_Y] = 2.0 * (1.0 - sp) * g[OFFSET_Y]
    out[OFFSET_T] = 2.0 * (1.0 - st) * g[OFFSET_T]
    return out * m.astype(np.float64)


def build_affine_matrix(params: AffineParams) -> np.ndarray:
    """Assemble the 3x4 crop transform acting on homogeneous (x, y, t, 1).

    The spatial block scales and rotates in-plane; time is scaled and shifted
    independently.  Note the off-diagonal sine entries carry no scale factor.
    """
    sp, st = params.spatial_scale, params.temporal_scale
    c, s = np.cos(params.angle), np.sin(params.angle)
    return np.array(
        [
            [sp * c, -s, 0.0, params.dx],
            [s, sp * c, 0.0, params.dy],
            [0.0, 0.0, st, params.dt],
        ]
    )


def generate_grid(t_len: int, h_len: int, w_len: int) -> np.ndarray:
    """Evenly spaced normalised sampling grid of shape (T, H, W, 3).

    Each grid point stores (x, y, t) coordinates in [-1, 1] with endpoints
    included; an axis of length 1 collapses to coordinate 0.
    """
    for name, n in (("t_len", t_len), ("h_len", h_len), ("w_len", w_len)):
        if n < 1:
            raise DimensionError(f"{name} must be >= 1, got {n}")

    def axis(n: int) -> np.ndarray:
        if n == 1:
            return np.zeros(1)
        return -1.0 + 2.0 * np.arange(n) / (n - 1)

    tc, yc, xc = np.meshgrid(axis(t_len), axis(h_len), axis(w_len), indexing="ij")
    return np.ascontiguousarray(np.stack([xc, yc, tc], axis=-1))


def transform_grid(grid: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Apply a 3x4 affine matrix to every (x, y, t) point of a grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim < 1 or grid.shape[-1] != 3:
        raise DimensionError(f"grid last axis must be 3, got shape {grid.shape}")
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 4):
        raise DimensionError(f"affine matrix must be 3x4, got {matrix.shape}")
    return grid @ matrix[:, :3].T + matrix[:, 3]


def transform_grid_backward(
    grad_coords: np.ndarray, grid: np.ndarray, params: AffineParams
) -> np.ndarray:
    """Gradient of a grid transform w.r.t. the six crop parameters.

    Parameters
    ----------
    grad_coords : (..., 3) ndarray
        Loss gradient w.r.t. the transformed coordinates.
    grid : (..., 3) ndarray
        The *untransformed* grid that was fed to :func:`transform_grid`.
    params : AffineParams
        Parameters the matrix was built from (the angle/scale derivative
        terms depend on them).

    Returns
    -------
    (6,) ndarray
        Accumulated gradient in canonical parameter order.
    """
    g = np.asarray(grad_coords, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if g.shape != grid.shape:
        raise DimensionError(
            f"grad/grid shape mismatch: {g.shape} vs {grid.shape}"
        )
    x, y, t = grid[..., 0], grid[..., 1], grid[..., 2]
    gx, gy, gt = g[..., 0], g[..., 1], g[..., 2]
    sp = params.spatial_scale
    c, s = np.cos(params.angle), np.sin(params.angle)

    out = np.zeros(6)
    out[SPATIAL_SCALE] = float(np.sum(gx * c * x) + np.sum(gy * c * y))
    out[TEMPORAL_SCALE] = float(np.sum(gt * t))
    # d/dangle of [sp*c, -s; s, sp*c] applied to (x, y).
    out[ANGLE] = float(
        np.sum(gx * (-sp * s * x - c * y)) + np.sum(gy * (c * x - sp * s * y))
    )
    out[OFFSET_X] = float(np.sum(gx))
    out[OFFSET_Y] = float(np.sum(gy))
    out[OFFSET_T] = float(np.sum(gt))
    return out
