"""Trilinear volume resampling on normalised grids, with analytic gradients.

Coordinates follow the endpoint-inclusive convention: -1 and +1 land exactly
on the first and last voxel centre of an axis (``index = (coord + 1) / 2 *
(len - 1)``).  Coordinates outside [-1, 1] are clamped to the border voxel;
their gradient in the clamped axis is zero, matching the flat extrapolation.

The backward pass differentiates w.r.t. the grid coordinates only — the
source video is training data here, never a learnable leaf.  At an exact
voxel boundary the derivative uses the cell above the boundary (one-sided),
except at the top edge of an axis where only the cell below exists.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def _check_inputs(video: np.ndarray, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    video = np.asarray(video, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if video.ndim != 4:
        raise DimensionError(f"video must be (C, T, H, W), got shape {video.shape}")
    if grid.ndim < 2 or grid.shape[-1] != 3:
        raise DimensionError(f"grid last axis must be 3, got shape {grid.shape}")
    for name, n in zip(("T", "H", "W"), video.shape[1:]):
        if n < 2:
            raise DimensionError(f"source axis {name} must have length >= 2, got {n}")
    return video, grid


def _cell_setup(coords: np.ndarray, length: int):
    """Map one axis of normalised coords to (cell index, fraction, clamped)."""
    clamped = (coords < -1.0) | (coords > 1.0)
    c = np.clip(coords, -1.0, 1.0)
    idx = (c + 1.0) * 0.5 * (length - 1)
    lo = np.floor(idx)
    np.clip(lo, 0, length - 2, out=lo)
    frac = idx - lo
    return lo.astype(np.int64), frac, clamped


def sample(video: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Trilinearly interpolate *video* at every grid point.

    Parameters
    ----------
    video : (C, T, H, W) ndarray
    grid : (..., 3) ndarray
        Normalised (x, y, t) sampling positions, typically (T', H', W', 3).

    Returns
    -------
    (C, ...) ndarray
        One interpolated channel stack per grid point.
    """
    video, grid = _check_inputs(video, grid)
    n_ch, t_len, h_len, w_len = video.shape
    out_shape = grid.shape[:-1]

    x = grid[..., 0].ravel()
    y = grid[..., 1].ravel()
    t = grid[..., 2].ravel()
    x0, fx, _ = _cell_setup(x, w_len)
    y0, fy, _ = _cell_setup(y, h_len)
    t0, ft, _ = _cell_setup(t, t_len)

    flat = video.reshape(n_ch, -1)
    base = (t0 * h_len + y0) * w_len + x0
    out = np.zeros((n_ch, x.size))
    for bt in (0, 1):
        wt = ft if bt else 1.0 - ft
        for by in (0, 1):
            wy = fy if by else 1.0 - fy
            for bx in (0, 1):
                wx = fx if bx else 1.0 - fx
                corner = flat[:, base + (bt * h_len + by) * w_len + bx]
                out += (wt * wy * wx) * corner
    return out.reshape((n_ch,) + out_shape)


def sample_backward(
    grad_out: np.ndarray, video: np.ndarray, grid: np.ndarray
) -> np.ndarray:
    """Gradient of :func:`sample` w.r.t. the grid coordinates.

    Parameters
    ----------
    grad_out : (C, ...) ndarray
        Loss gradient w.r.t. the sampled output.
    video, grid
        The original forward inputs.

    Returns
    -------
    ndarray with the same shape as *grid*
        Per-point (x, y, t) coordinate gradients; zero in any axis whose
        coordinate was clamped at the border.
    """
    video, grid = _check_inputs(video, grid)
    n_ch, t_len, h_len, w_len = video.shape
    grad_out = np.asarray(grad_out, dtype=np.float64)
    expected = (n_ch,) + grid.shape[:-1]
    if grad_out.shape != expected:
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match {expected}"
        )

    x = grid[..., 0].ravel()
    y = grid[..., 1].ravel()
    t = grid[..., 2].ravel()
    x0, fx, cx = _cell_setup(x, w_len)
    y0, fy, cy = _cell_setup(y, h_len)
    t0, ft, ct = _cell_setup(t, t_len)

    flat = video.reshape(n_ch, -1)
    base = (t0 * h_len + y0) * w_len + x0
    corners = {}
    for bt in (0, 1):
        for by in (0, 1):
            for bx in (0, 1):
                corners[bt, by, bx] = flat[
                    :, base + (bt * h_len + by) * w_len + bx
                ]

    wt = (1.0 - ft, ft)
    wy = (1.0 - fy, fy)
    wx = (1.0 - fx, fx)
    # d(value)/d(fraction) along each axis: difference of the two faces of
    # the cell, blended by the weights of the other two axes.
    dfx = sum(
        wt[bt] * wy[by] * (corners[bt, by, 1] - corners[bt, by, 0])
        for bt in (0, 1)
        for by in (0, 1)
    )
    dfy = sum(
        wt[bt] * wx[bx] * (corners[bt, 1, bx] - corners[bt, 0, bx])
        for bt in (0, 1)
        for bx in (0, 1)
    )
    dft = sum(
        wy[by] * wx[bx] * (corners[1, by, bx] - corners[0, by, bx])
        for by in (0, 1)
        for bx in (0, 1)
    )

    g = grad_out.reshape(n_ch, -1)
    gx = np.sum(g * dfx, axis=0) * (0.5 * (w_len - 1))
    gy = np.sum(g * dfy, axis=0) * (0.5 * (h_len - 1))
    gt = np.sum(g * dft, axis=0) * (0.5 * (t_len - 1))
    gx[cx] = 0.0
    gy[cy] = 0.0
    gt[ct] = 0.0
    return np.stack([gx, gy, gt], axis=-1).reshape(grid.shape)
