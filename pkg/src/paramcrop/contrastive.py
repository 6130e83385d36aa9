"""Normalised-temperature cross-entropy loss and a small 3D conv encoder.

Embedding rows come in consecutive pairs: rows ``2k`` and ``2k+1`` are the
two cropped views of sample ``k``.  The loss averages the pairwise terms in
both directions over all ``2N`` ordered (anchor, partner) pairs; each term is
a softmax cross-entropy over the anchor's cosine similarities to every other
row (the anchor itself is excluded from the denominator).

:func:`nt_xent` accepts arbitrary rows and L2-normalises internally (with a
zero-vector guard), so :func:`nt_xent_backward` includes the normalisation
Jacobian and finite differences on the raw rows agree with it.  The stricter
:func:`cosine_matrix` contract — rows already unit-norm — is enforced there.

The encoder is toy by design: one valid-padded strided 3D convolution, ReLU,
global average pooling, a linear projection, then L2 normalisation.  It is
just large enough that crop placement visibly changes the embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

_NORM_EPS = 1e-12
_UNIT_TOL = 1e-8


@dataclass(frozen=True)
class LossConfig:
    """Contrastive loss settings: softmax temperature and pair count."""

    temperature: float = 0.1
    num_samples: int = 1

    def __post_init__(self) -> None:
        if not self.temperature > 0.0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.num_samples < 1:
            raise ConfigError(f"num_samples must be >= 1, got {self.num_samples}")


def _check_embeddings(embeddings: np.ndarray, cfg: LossConfig) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise DimensionError(f"embeddings must be 2-D, got shape {e.shape}")
    if e.shape[0] != 2 * cfg.num_samples:
        raise DimensionError(
            f"expected {2 * cfg.num_samples} rows for num_samples="
            f"{cfg.num_samples}, got {e.shape[0]}"
        )
    return e


def _normalise_rows(e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise unit vectors plus the original norms (zero rows stay zero)."""
    norms = np.sqrt(np.sum(e * e, axis=1))
    safe = np.where(norms > _NORM_EPS, norms, 1.0)
    unit = e / safe[:, None]
    unit[norms <= _NORM_EPS] = 0.0
    return unit, norms


def cosine_matrix(embeddings: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities of rows that must already be unit-norm."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise DimensionError(f"embeddings must be 2-D, got shape {e.shape}")
    norms = np.sqrt(np.sum(e * e, axis=1))
    bad = np.abs(norms - 1.0) > _UNIT_TOL
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise ContractError(
            f"row {idx} is not unit-norm (|row| = {norms[idx]:.12g})"
        )
    return e @ e.T


def _pair_softmax(e: np.ndarray, cfg: LossConfig):
    """Shared forward pieces: unit rows, off-diagonal softmax, partner index."""
    unit, norms = _normalise_rows(e)
    logits = (unit @ unit.T) / cfg.temperature
    n_rows = e.shape[0]
    diag = np.arange(n_rows)
    logits[diag, diag] = -np.inf          # anchor never its own candidate
    shift = np.max(logits, axis=1, keepdims=True)
    expd = np.exp(logits - shift)
    denom = np.sum(expd, axis=1, keepdims=True)
    softmax = expd / denom
    log_denom = shift[:, 0] + np.log(denom[:, 0])
    partner = diag ^ 1                     # 2k <-> 2k+1
    return unit, norms, logits, softmax, log_denom, partner


def nt_xent(embeddings: np.ndarray, cfg: LossConfig) -> float:
    """Average pairwise contrastive loss over all 2N ordered view pairs."""
    e = _check_embeddings(embeddings, cfg)
    _, _, logits, _, log_denom, partner = _pair_softmax(e, cfg)
    rows = np.arange(e.shape[0])
    per_anchor = log_denom - logits[rows, partner]
    return float(np.mean(per_anchor))


def nt_xent_backward(embeddings: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Gradient of :func:`nt_xent` w.r.t. the raw (unnormalised) rows."""
    e = _check_embeddings(embeddings, cfg)
    unit, norms, _, softmax, _, partner = _pair_softmax(e, cfg)
    n_rows = e.shape[0]
    rows = np.arange(n_rows)
    # d(loss)/d(similarity matrix): softmax minus the one-hot partner, scaled.
    grad_sim = softmax.copy()
    grad_sim[rows, partner] -= 1.0
    grad_sim /= n_rows * cfg.temperature
    grad_unit = (grad_sim + grad_sim.T) @ unit
    # Through row normalisation: project out the radial component.
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    grad = (grad_unit - radial * unit) / np.where(
        norms > _NORM_EPS, norms, 1.0
    )[:, None]
    grad[norms <= _NORM_EPS] = 0.0
    return grad


# ---------------------------------------------------------------------------
# Toy encoder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyEncoder:
    """Weights of the desk-scale video encoder.

    conv_weight : (channels_out, channels_in, K, K, K)
    conv_bias : (channels_out,)
    proj_weight : (embed_dim, channels_out)
    proj_bias : (embed_dim,)
    """

    conv_weight: np.ndarray
    conv_bias: np.ndarray
    proj_weight: np.ndarray
    proj_bias: np.ndarray
    stride: int = 2

    @property
    def kernel(self) -> int:
        return self.conv_weight.shape[2]

    @property
    def embed_dim(self) -> int:
        return self.proj_weight.shape[0]

    @classmethod
    def initialise(
        cls,
        rng: np.random.Generator,
        in_channels: int = 3,
        conv_channels: int = 8,
        embed_dim: int = 32,
        kernel: int = 3,
        stride: int = 2,
    ) -> "ToyEncoder":
        """Uniform fan-in init, same flavour as common conv initialisers."""
        if kernel < 1 or stride < 1:
            raise ConfigError("kernel and stride must be >= 1")
        fan_conv = in_channels * kernel**3
        a = 1.0 / np.sqrt(fan_conv)
        conv_w = rng.uniform(-a, a, size=(conv_channels, in_channels,
                                          kernel, kernel, kernel))
        conv_b = rng.uniform(-a, a, size=conv_channels)
        b = 1.0 / np.sqrt(conv_channels)
        proj_w = rng.uniform(-b, b, size=(embed_dim, conv_channels))
        proj_b = rng.uniform(-b, b, size=embed_dim)
        return cls(conv_w, conv_b, proj_w, proj_b, stride=stride)


@dataclass(frozen=True)
class EncodeCache:
    """Forward intermediates for :func:`encode_backward`."""

    video: np.ndarray
    conv_pre: np.ndarray
    pooled: np.ndarray
    projected: np.ndarray
    norm: float


def _conv_windows(video: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(
        video, (kernel, kernel, kernel), axis=(1, 2, 3)
    )
    return win[:, ::stride, ::stride, ::stride]


def encode(video: np.ndarray, enc: ToyEncoder) -> tuple[np.ndarray, EncodeCache]:
    """Embed one video clip; returns a unit-norm embedding and a cache."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4:
        raise DimensionError(f"video must be (C, T, H, W), got {video.shape}")
    if video.shape[0] != enc.conv_weight.shape[1]:
        raise DimensionError(
            f"video has {video.shape[0]} channels, encoder expects "
            f"{enc.conv_weight.shape[1]}"
        )
    if min(video.shape[1:]) < enc.kernel:
        raise DimensionError(
            f"every video axis must be >= kernel {enc.kernel}, "
            f"got {video.shape[1:]}"
        )
    windows = _conv_windows(video, enc.kernel, enc.stride)
    pre = np.einsum("cthwijk,ocijk->othw", windows, enc.conv_weight)
    pre += enc.conv_bias[:, None, None, None]
    act = np.maximum(pre, 0.0)
    pooled = act.mean(axis=(1, 2, 3))
    projected = enc.proj_weight @ pooled + enc.proj_bias
    norm = float(np.sqrt(np.sum(projected * projected)))
    if norm > _NORM_EPS:
        embedding = projected / norm
    else:
        embedding = np.zeros_like(projected)
    cache = EncodeCache(video=video, conv_pre=pre, pooled=pooled,
                        projected=projected, norm=norm)
    return embedding, cache


def encode_backward(
    grad_embedding: np.ndarray, cache: EncodeCache, enc: ToyEncoder
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of :func:`encode` w.r.t. encoder weights and the input clip.

    Returns
    -------
    (grads, grad_video)
        ``grads`` holds ``conv_w``, ``conv_b``, ``proj_w``, ``proj_b``;
        ``grad_video`` matches the input clip's shape.
    """
    g_emb = np.asarray(grad_embedding, dtype=np.float64)
    if cache.norm > _NORM_EPS:
        unit = cache.projected / cache.norm
        g_proj = (g_emb - unit * np.dot(unit, g_emb)) / cache.norm
    else:
        g_proj = np.zeros_like(g_emb)
    g_proj_w = np.outer(g_proj, cache.pooled)
    g_proj_b = g_proj
    g_pooled = enc.proj_weight.T @ g_proj
    cells = int(np.prod(cache.conv_pre.shape[1:]))
    g_act = np.broadcast_to(
        (g_pooled / cells)[:, None, None, None], cache.conv_pre.shape
    )
    g_pre = np.where(cache.conv_pre > 0.0, g_act, 0.0)
    windows = _conv_windows(cache.video, enc.kernel, enc.stride)
    g_conv_w = np.einsum("cthwijk,othw->ocijk", windows, g_pre)
    g_conv_b = g_pre.sum(axis=(1, 2, 3))

    grad_video = np.zeros_like(cache.video)
    k, s = enc.kernel, enc.stride
    n_t, n_h, n_w = cache.conv_pre.shape[1:]
    for i in range(k):
        for j in range(k):
            for l in range(k):
                contrib = np.einsum(
                    "othw,oc->cthw", g_pre, enc.conv_weight[:, :, i, j, l]
                )
                grad_video[
                    :,
                    i : i + s * (n_t - 1) + 1 : s,
                    j : j + s * (n_h - 1) + 1 : s,
                    l : l + s * (n_w - 1) + 1 : s,
                ] += contrib
    grads = {
        "conv_w": g_conv_w,
        "conv_b": g_conv_b,
        "proj_w": g_proj_w,
        "proj_b": g_proj_b,
    }
    return grads, grad_video
