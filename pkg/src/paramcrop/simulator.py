"""Desk-scale adversarial training simulator and crop-overlap metrics.

One run couples three learners: a toy encoder minimising a contrastive loss
over paired crops, and two crop-parameter generators (one per view branch)
receiving the *reversed* gradient, so they ascend the same loss and actively
push the two views apart.  Baseline strategies replace the generators with
fixed or scheduled crop placements; the encoder trains identically either way.

Geometry metrics are exact interval arithmetic on axis-aligned crop cubes in
the normalised [-1, 1]^3 clip volume.  They are computed from the mapped crop
parameters before any resampling, so they carry no interpolation error.

Determinism: a run is a pure function of its config.  All randomness flows
from one seed through a fixed tree of spawned generators, and gradient
accumulation order is fixed, so identical configs give bit-identical metrics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace

import numpy as np

from .affine import (
    AffineParams,
    ParamBounds,
    apply_early_stop,
    build_affine_matrix,
    clamp_params,
    clamp_params_backward,
    generate_grid,
    transform_grid,
    transform_grid_backward,
)
from .contrastive import (
    LossConfig,
    ToyEncoder,
    encode,
    encode_backward,
    nt_xent,
    nt_xent_backward,
)
from .errors import ConfigError, TrainingError, UnsupportedMetricError
from .paramgen import (
    CropperState,
    MlpCache,
    SgdMomentum,
    mlp_backward,
    mlp_forward,
    reverse_gradient,
    sample_noise,
    update_weights,
)
from .sampler import sample, sample_backward

logger = logging.getLogger(__name__)

STRATEGIES = ("paramcrop", "random", "simple", "hard", "manual")

CSV_HEADER = "step,loss,iou,dist_raw,dist_norm,v_sp,v_st,v_theta,v_dx,v_dy,v_dt"


# ---------------------------------------------------------------------------
# Crop cubes and overlap metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CropCube:
    """Axis-aligned cube in the normalised clip volume.

    ``center`` and ``half`` are (x, y, t) arrays; the cube spans
    ``center - half`` to ``center + half`` per axis.
    """

    center: np.ndarray
    half: np.ndarray

    @property
    def intervals(self) -> np.ndarray:
        """(3, 2) array of per-axis (low, high) bounds."""
        return np.stack([self.center - self.half, self.center + self.half], axis=1)

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half))


def crop_cube(params: AffineParams) -> CropCube:
    """Cube covered by a zero-angle crop.

    Raises
    ------
    UnsupportedMetricError
        If the angle is non-zero: a rotated crop is not axis-aligned, so the
        interval metrics below do not apply.
    """
    if params.angle != 0.0:
        raise UnsupportedMetricError(
            f"crop cube is only defined for zero angle, got {params.angle}"
        )
    center = np.array([params.dx, params.dy, params.dt])
    half = np.array(
        [params.spatial_scale, params.spatial_scale, params.temporal_scale]
    )
    return CropCube(center=center, half=half)


def st_iou(a: CropCube, b: CropCube) -> float:
    """Intersection-over-union of two axis-aligned cubes."""
    ia, ib = a.intervals, b.intervals
    overlap = np.minimum(ia[:, 1], ib[:, 1]) - np.maximum(ia[:, 0], ib[:, 0])
    inter = float(np.prod(np.maximum(overlap, 0.0)))
    union = a.volume + b.volume - inter
    return inter / union


def center_manhattan(a: CropCube, b: CropCube) -> tuple[float, float]:
    """Manhattan distance between cube centres, raw and normalised.

    The normaliser is the largest Manhattan distance reachable at the cubes'
    own sizes (per axis, each centre can stray at most ``1 - half`` from the
    origin).  When both cubes fill the clip the normaliser is zero and the
    normalised distance is defined as zero.
    """
    raw = float(np.sum(np.abs(a.center - b.center)))
    denom = float(np.sum((1.0 - a.half) + (1.0 - b.half)))
    if denom <= 0.0:
        return raw, 0.0
    return raw, min(raw / denom, 1.0)


# ---------------------------------------------------------------------------
# Baseline crop strategies
# ---------------------------------------------------------------------------


def _manual_ramp(step: int, total_steps: int, breakpoint_frac: float) -> float:
    if total_steps <= 1:
        return 0.0
    pos = step / (total_steps - 1)
    if pos <= breakpoint_frac:
        return 0.0
    return (pos - breakpoint_frac) / (1.0 - breakpoint_frac)


def baseline_params(
    strategy: str,
    step: int,
    total_steps: int,
    rng: np.random.Generator,
    jitter: float = 0.0,
    manual_breakpoint: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Unit-interval parameter vectors for the two views of one sample.

    Strategies
    ----------
    random
        Both views drawn uniformly from [0, 1]^6.
    simple
        Two full-size centred crops (maximal overlap).
    hard
        Minimum-size crops pinned to opposite corners (minimal overlap).
    manual
        Minimum-size crops whose centre separation ramps linearly from 0 to
        the maximum over the run; ``manual_breakpoint`` delays the ramp to
        the late fraction of the run.

    ``jitter`` adds uniform noise of that amplitude to the deterministic
    placements (ignored for ``random``), then clips back to [0, 1].
    """
    if strategy == "random":
        return rng.random(6), rng.random(6)
    if strategy == "simple":
        base_a = np.array([1.0, 1.0, 0.5, 0.5, 0.5, 0.5])
        base_b = base_a.copy()
    elif strategy == "hard":
        base_a = np.array([0.0, 0.0, 0.5, 0.0, 0.0, 0.0])
        base_b = np.array([0.0, 0.0, 0.5, 1.0, 1.0, 1.0])
    elif strategy == "manual":
        gap = _manual_ramp(step, total_steps, manual_breakpoint)
        base_a = np.array([0.0, 0.0, 0.5] + [0.5 - gap / 2.0] * 3)
        base_b = np.array([0.0, 0.0, 0.5] + [0.5 + gap / 2.0] * 3)
    else:
        raise ConfigError(f"unknown crop strategy '{strategy}'")
    if jitter > 0.0:
        base_a = np.clip(base_a + rng.uniform(-jitter, jitter, 6), 0.0, 1.0)
        base_b = np.clip(base_b + rng.uniform(-jitter, jitter, 6), 0.0, 1.0)
    return base_a, base_b


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def make_synthetic_batch(
    rng: np.random.Generator, count: int, shape: tuple[int, int, int, int]
) -> list[np.ndarray]:
    """Generate clips of a moving Gaussian blob over low-amplitude noise.

    Each clip gets a random start position, velocity, radius and per-channel
    colour, so position in space *and* time is informative — exactly what a
    crop-placement adversary needs to exploit.  Values are non-negative and
    vary smoothly, which keeps resampling gradients well behaved.
    """
    if count < 1:
        raise ConfigError(f"batch count must be >= 1, got {count}")
    channels, t_len, h_len, w_len = shape
    grid = generate_grid(t_len, h_len, w_len)
    x, y, t = grid[..., 0], grid[..., 1], grid[..., 2]
    clips = []
    for _ in range(count):
        start = rng.uniform(-0.5, 0.5, 2)
        velocity = rng.uniform(-0.5, 0.5, 2)
        radius = rng.uniform(0.2, 0.4)
        colour = rng.uniform(0.5, 1.0, channels)
        noise = 0.05 * rng.random((channels, t_len, h_len, w_len))
        cx = start[0] + velocity[0] * t
        cy = start[1] + velocity[1] * t
        blob = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * radius**2))
        clips.append(colour[:, None, None, None] * blob[None] + noise)
    return clips


# ---------------------------------------------------------------------------
# Training configuration
# ---------------------------------------------------------------------------


def _parse_shape(text: str, rank: int, field_name: str) -> tuple[int, ...]:
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{field_name}: expected INTxINT..., got {text!r}") from exc
    if len(dims) != rank:
        raise ConfigError(f"{field_name}: expected {rank} dims, got {len(dims)}")
    return dims


def _parse_bool(text: str, field_name: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{field_name}: expected true/false, got {text!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Full description of one simulator run.  See field names for meaning.

    Shapes are (channels, frames, height, width) for the input clips and
    (frames, height, width) for the crop; scale/angle bounds feed straight
    into :class:`~paramcrop.affine.ParamBounds`.
    """

    steps: int = 2000
    batch_size: int = 8
    input_shape: tuple[int, int, int, int] = (3, 16, 32, 32)
    crop_shape: tuple[int, int, int] = (8, 16, 16)
    strategy: str = "paramcrop"
    seed: int = 0
    temperature: float = 0.1
    encoder_lr: float = 0.05
    # Tuned so the adversarial escape lands inside a 2000-step run: low
    # enough that the first ~10% of steps stay near-identical crops, high
    # enough that the generators saturate their detach band well before the
    # end.
    cropper_lr: float = 0.05
    momentum: float = 0.9
    spatial_scale_min: float = 0.5
    spatial_scale_max: float = 1.0
    temporal_scale_min: float = 0.5
    temporal_scale_max: float = 1.0
    angle_min: float = 0.0
    angle_max: float = 0.0
    detach_bound: float = 0.2
    noise_dim: int = 16
    hidden_dim: int = 32
    embed_dim: int = 32
    conv_channels: int = 8
    probe_samples: int = 64
    baseline_jitter: float = 0.02
    manual_breakpoint: float = 0.0
    random_flip: bool = False
    pre_crop: bool = False

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"steps: must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"strategy: unknown value '{self.strategy}' "
                f"(choose from {', '.join(STRATEGIES)})"
            )
        if len(self.input_shape) != 4 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape: bad dims {self.input_shape}")
        if len(self.crop_shape) != 3 or min(self.crop_shape) < 3:
            raise ConfigError(
                f"crop_shape: every crop axis must be >= 3 (encoder kernel), "
                f"got {self.crop_shape}"
            )
        if min(self.input_shape[1:]) < 2:
            raise ConfigError(f"input_shape: axes must be >= 2, got {self.input_shape}")
        for axis, (crop_n, full_n) in enumerate(
            zip(self.crop_shape, self.input_shape[1:])
        ):
            if crop_n > full_n:
                raise ConfigError(
                    f"crop_shape: axis {axis} ({crop_n}) exceeds input ({full_n})"
                )
        if not self.temperature > 0.0:
            raise ConfigError(f"temperature: must be > 0, got {self.temperature}")
        for name in ("encoder_lr", "cropper_lr"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name}: must be > 0, got {getattr(self, name)}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum: must lie in [0, 1), got {self.momentum}")
        for lo_name, hi_name in (
            ("spatial_scale_min", "spatial_scale_max"),
            ("temporal_scale_min", "temporal_scale_max"),
        ):
            lo, hi = getattr(self, lo_name), getattr(self, hi_name)
            if not 0.0 < lo <= hi <= 1.0:
                raise ConfigError(
                    f"{lo_name}/{hi_name}: need 0 < min <= max <= 1, "
                    f"got ({lo}, {hi})"
                )
        if self.angle_min > self.angle_max:
            raise ConfigError(
                f"angle_min/angle_max: need min <= max, "
                f"got ({self.angle_min}, {self.angle_max})"
            )
        if not 0.0 <= self.detach_bound <= 0.5:
            raise ConfigError(
                f"detach_bound: must lie in [0, 0.5], got {self.detach_bound}"
            )
        for name in ("noise_dim", "hidden_dim", "embed_dim", "conv_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.probe_samples < 1:
            raise ConfigError(
                f"probe_samples: must be >= 1, got {self.probe_samples}"
            )
        if not 0.0 <= self.baseline_jitter <= 0.5:
            raise ConfigError(
                f"baseline_jitter: must lie in [0, 0.5], got {self.baseline_jitter}"
            )
        if not 0.0 <= self.manual_breakpoint < 1.0:
            raise ConfigError(
                f"manual_breakpoint: must lie in [0, 1), got {self.manual_breakpoint}"
            )

    @property
    def bounds(self) -> ParamBounds:
        return ParamBounds(
            spatial_scale_range=(self.spatial_scale_min, self.spatial_scale_max),
            temporal_scale_range=(self.temporal_scale_min, self.temporal_scale_max),
            angle_range=(self.angle_min, self.angle_max),
            detach_bound=self.detach_bound,
        )


_SHAPE_FIELDS = {"input_shape": 4, "crop_shape": 3}
_BOOL_FIELDS = ("random_flip", "pre_crop")


def config_to_pairs(cfg: TrainConfig) -> dict[str, str]:
    """Flatten a config to text values in canonical field order."""
    out: dict[str, str] = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SHAPE_FIELDS:
            out[f.name] = "x".join(str(d) for d in value)
        elif f.name in _BOOL_FIELDS:
            out[f.name] = "true" if value else "false"
        else:
            out[f.name] = repr(value) if isinstance(value, float) else str(value)
    return out


def config_from_pairs(
    pairs: dict[str, str], base: TrainConfig | None = None
) -> TrainConfig:
    """Apply text overrides to *base* (default config when omitted).

    Unknown keys and unparsable values raise :class:`ConfigError` naming the
    offending field.
    """
    base = base if base is not None else TrainConfig()
    known = {f.name: f for f in fields(base)}
    updates: dict[str, object] = {}
    for key, text in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config key '{key}'")
        if key in _SHAPE_FIELDS:
            updates[key] = _parse_shape(text, _SHAPE_FIELDS[key], key)
        elif key in _BOOL_FIELDS:
            updates[key] = _parse_bool(text, key)
        elif key == "strategy":
            updates[key] = text.strip()
        else:
            caster = type(getattr(base, key))
            try:
                updates[key] = caster(text)
            except ValueError as exc:
                raise ConfigError(
                    f"{key}: cannot parse {text!r} as {caster.__name__}"
                ) from exc
    return replace(base, **updates)


# ---------------------------------------------------------------------------
# Metrics log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRecord:
    """Per-step log row: loss, batch-mean geometry, batch-mean unit params."""

    step: int
    loss: float
    iou: float
    dist_raw: float
    dist_norm: float
    unit_mean: np.ndarray  # (6,)


def format_float(x: float) -> str:
    """Canonical CSV float rendering: 9 significant digits."""
    return f"{x:.9g}"


def format_record(r: MetricsRecord) -> str:
    """One CSV row (no trailing newline), column order per CSV_HEADER."""
    cells = [str(r.step), format_float(r.loss), format_float(r.iou),
             format_float(r.dist_raw), format_float(r.dist_norm)]
    cells.extend(format_float(v) for v in r.unit_mean)
    return ",".join(cells)


def render_csv(records: list[MetricsRecord]) -> str:
    """Serialise records with a fixed header and 9-significant-digit floats."""
    lines = [CSV_HEADER]
    lines.extend(format_record(r) for r in records)
    return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    """Everything a finished run hands back to callers.

    ``cropper_grad_max`` records, per step, the largest absolute generator
    weight-gradient (always 0.0 for baseline strategies) — used to verify
    that a full detach band really silences the adversary.
    """

    config: TrainConfig
    records: list[MetricsRecord]
    probe_iou: float
    probe_dist_norm: float
    cropper_grad_max: list[float]
    encoder: ToyEncoder
    croppers: tuple[CropperState, CropperState] | None


# ---------------------------------------------------------------------------
# The training loop
# ---------------------------------------------------------------------------


class _Trainer:
    """Owns all mutable run state; one instance per call to run_training."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.bounds = cfg.bounds
        root = np.random.SeedSequence(cfg.seed)
        (
            data_ss, enc_ss, crop_a_ss, crop_b_ss,
            noise_a_ss, noise_b_ss, baseline_ss, probe_ss, flip_ss, precrop_ss,
        ) = root.spawn(10)
        self.data_rng = np.random.default_rng(data_ss)
        self.baseline_rng = np.random.default_rng(baseline_ss)
        self.probe_rng = np.random.default_rng(probe_ss)
        self.flip_rng = np.random.default_rng(flip_ss)
        self.precrop_rng = np.random.default_rng(precrop_ss)
        self.noise_rngs = (
            np.random.default_rng(noise_a_ss),
            np.random.default_rng(noise_b_ss),
        )
        self.encoder = ToyEncoder.initialise(
            np.random.default_rng(enc_ss),
            in_channels=cfg.input_shape[0],
            conv_channels=cfg.conv_channels,
            embed_dim=cfg.embed_dim,
        )
        self.enc_opt = SgdMomentum(cfg.encoder_lr, cfg.momentum)
        self.adversarial = cfg.strategy == "paramcrop"
        if self.adversarial:
            self.croppers = [
                CropperState.initialise(
                    np.random.default_rng(ss),
                    noise_dim=cfg.noise_dim,
                    hidden_dim=cfg.hidden_dim,
                    bounds=self.bounds,
                )
                for ss in (crop_a_ss, crop_b_ss)
            ]
            self.crop_opts = [
                SgdMomentum(cfg.cropper_lr, cfg.momentum) for _ in range(2)
            ]
        else:
            self.croppers = None
            self.crop_opts = None
        self.crop_grid = generate_grid(*cfg.crop_shape)
        self.input_grid = generate_grid(*cfg.input_shape[1:])
        self.loss_cfg = LossConfig(cfg.temperature, cfg.batch_size)
        # Interval metrics assume axis-aligned cubes; a non-zero angle range
        # makes them undefined, so those columns become NaN.
        self.metrics_enabled = cfg.angle_min == 0.0 and cfg.angle_max == 0.0

    # -- parameter draws ---------------------------------------------------

    def _draw_pair(
        self, step: int, rng_override: np.random.Generator | None = None
    ) -> tuple[tuple[np.ndarray, ...], tuple]:
        """One (view A, view B) unit-param draw plus adversary bookkeeping."""
        cfg = self.cfg
        if self.adversarial:
            units, masks, caches = [], [], []
            for branch in (0, 1):
                rng = rng_override or self.noise_rngs[branch]
                noise = sample_noise(rng, cfg.noise_dim)
                unit, cache = mlp_forward(noise, self.croppers[branch])
                unit, mask = apply_early_stop(unit, self.bounds.detach_bound)
                units.append(unit)
                masks.append(mask)
                caches.append(cache)
            return tuple(units), (tuple(masks), tuple(caches))
        rng = rng_override or self.baseline_rng
        unit_a, unit_b = baseline_params(
            cfg.strategy, step, cfg.steps, rng,
            jitter=cfg.baseline_jitter,
            manual_breakpoint=cfg.manual_breakpoint,
        )
        return (unit_a, unit_b), (None, None)

    # -- probe -------------------------------------------------------------

    def probe(self) -> tuple[float, float]:
        """Mean overlap/distance of fresh parameter draws before training."""
        if not self.metrics_enabled:
            return float("nan"), float("nan")
        ious, dists = [], []
        for _ in range(self.cfg.probe_samples):
            units, _ = self._draw_pair(step=0, rng_override=self.probe_rng)
            cube_a = crop_cube(clamp_params(units[0], self.bounds))
            cube_b = crop_cube(clamp_params(units[1], self.bounds))
            ious.append(st_iou(cube_a, cube_b))
            dists.append(center_manhattan(cube_a, cube_b)[1])
        return float(np.mean(ious)), float(np.mean(dists))

    # -- augmentation ------------------------------------------------------

    def _augment(self, clip: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        out = clip
        if cfg.random_flip and self.flip_rng.random() < 0.5:
            out = np.ascontiguousarray(out[..., ::-1])
        if cfg.pre_crop:
            unit = self.precrop_rng.random(6)
            pre_params = clamp_params(unit, self.bounds)
            grid = transform_grid(self.input_grid, build_affine_matrix(pre_params))
            out = sample(out, grid)
        return out

    # -- one optimisation step --------------------------------------------

    def step(self, index: int) -> tuple[MetricsRecord, float]:
        cfg = self.cfg
        n_pairs = cfg.batch_size
        n_rows = 2 * n_pairs
        batch = make_synthetic_batch(self.data_rng, n_pairs, cfg.input_shape)

        units: list[np.ndarray] = [None] * n_rows
        masks: list[np.ndarray | None] = [None] * n_rows
        mlp_caches: list[MlpCache | None] = [None] * n_rows
        params: list[AffineParams] = [None] * n_rows
        sources: list[np.ndarray] = [None] * n_rows
        grids: list[np.ndarray] = [None] * n_rows
        enc_caches = [None] * n_rows
        embeddings = np.empty((n_rows, cfg.embed_dim))

        for k in range(n_pairs):
            pair_units, (pair_masks, pair_caches) = self._draw_pair(index)
            for branch in (0, 1):
                row = 2 * k + branch
                units[row] = pair_units[branch]
                if pair_masks is not None:
                    masks[row] = pair_masks[branch]
                    mlp_caches[row] = pair_caches[branch]
                params[row] = clamp_params(pair_units[branch], self.bounds)
                source = self._augment(batch[k])
                grid = transform_grid(
                    self.crop_grid, build_affine_matrix(params[row])
                )
                crop = sample(source, grid)
                embeddings[row], enc_caches[row] = encode(crop, self.encoder)
                sources[row] = source
                grids[row] = grid

        iou_mean, raw_mean, norm_mean = np.nan, np.nan, np.nan
        if self.metrics_enabled:
            ious, raws, norms = [], [], []
            for k in range(n_pairs):
                cube_a = crop_cube(params[2 * k])
                cube_b = crop_cube(params[2 * k + 1])
                self._assert_contained(cube_a, index)
                self._assert_contained(cube_b, index)
                ious.append(st_iou(cube_a, cube_b))
                raw, norm = center_manhattan(cube_a, cube_b)
                raws.append(raw)
                norms.append(norm)
            iou_mean = float(np.mean(ious))
            raw_mean = float(np.mean(raws))
            norm_mean = float(np.mean(norms))

        loss = nt_xent(embeddings, self.loss_cfg)
        if not np.isfinite(loss):
            stacked = np.stack(units)
            raise TrainingError(
                f"non-finite loss at step {index}; unit params "
                f"mean={stacked.mean():.6g} min={stacked.min():.6g} "
                f"max={stacked.max():.6g}"
            )

        grad_rows = nt_xent_backward(embeddings, self.loss_cfg)
        enc_acc = {
            "conv_w": np.zeros_like(self.encoder.conv_weight),
            "conv_b": np.zeros_like(self.encoder.conv_bias),
            "proj_w": np.zeros_like(self.encoder.proj_weight),
            "proj_b": np.zeros_like(self.encoder.proj_bias),
        }
        crop_acc = [
            [np.zeros_like(self.croppers[b].w1), np.zeros_like(self.croppers[b].w2)]
            for b in range(2)
        ] if self.adversarial else None

        for row in range(n_rows):
            enc_grads, grad_crop = encode_backward(
                grad_rows[row], enc_caches[row], self.encoder
            )
            for key in enc_acc:
                enc_acc[key] += enc_grads[key]
            if not self.adversarial:
                continue
            branch = row % 2
            grad_coords = sample_backward(grad_crop, sources[row], grids[row])
            grad_params = transform_grid_backward(
                grad_coords, self.crop_grid, params[row]
            )
            grad_unit = clamp_params_backward(
                grad_params, units[row], self.bounds, masks[row]
            )
            grad_unit = reverse_gradient(grad_unit)
            gw1, gw2 = mlp_backward(
                grad_unit, mlp_caches[row], self.croppers[branch]
            )
            crop_acc[branch][0] += gw1
            crop_acc[branch][1] += gw2

        updated = self.enc_opt.step(
            {
                "conv_w": self.encoder.conv_weight,
                "conv_b": self.encoder.conv_bias,
                "proj_w": self.encoder.proj_weight,
                "proj_b": self.encoder.proj_bias,
            },
            enc_acc,
            step_index=index,
        )
        self.encoder = replace(
            self.encoder,
            conv_weight=updated["conv_w"],
            conv_bias=updated["conv_b"],
            proj_weight=updated["proj_w"],
            proj_bias=updated["proj_b"],
        )

        grad_max = 0.0
        if self.adversarial:
            for branch in range(2):
                gw1, gw2 = crop_acc[branch]
                grad_max = max(
                    grad_max,
                    float(np.max(np.abs(gw1))) if gw1.size else 0.0,
                    float(np.max(np.abs(gw2))) if gw2.size else 0.0,
                )
                self.croppers[branch] = update_weights(
                    self.croppers[branch], gw1, gw2,
                    self.crop_opts[branch], step_index=index,
                )

        record = MetricsRecord(
            step=index,
            loss=loss,
            iou=iou_mean,
            dist_raw=raw_mean,
            dist_norm=norm_mean,
            unit_mean=np.stack(units).mean(axis=0),
        )
        return record, grad_max

    @staticmethod
    def _assert_contained(cube: CropCube, step: int) -> None:
        iv = cube.intervals
        if np.any(iv[:, 0] < -1.0) or np.any(iv[:, 1] > 1.0):
            raise TrainingError(
                f"crop cube escaped the clip volume at step {step}: {iv.tolist()}"
            )


def run_training(cfg: TrainConfig) -> RunResult:
    """Run the full simulation described by *cfg* and return all artefacts."""
    trainer = _Trainer(cfg)
    probe_iou, probe_dist = trainer.probe()
    logger.info(
        "run start: strategy=%s steps=%d probe_iou=%.4f probe_dist=%.4f",
        cfg.strategy, cfg.steps, probe_iou, probe_dist,
    )
    records: list[MetricsRecord] = []
    grad_maxes: list[float] = []
    for index in range(cfg.steps):
        record, grad_max = trainer.step(index)
        records.append(record)
        grad_maxes.append(grad_max)
        if cfg.steps >= 10 and (index + 1) % max(1, cfg.steps // 10) == 0:
            logger.info(
                "step %d/%d loss=%.4f iou=%.4f dist_norm=%.4f",
                index + 1, cfg.steps, record.loss, record.iou, record.dist_norm,
            )
    return RunResult(
        config=cfg,
        records=records,
        probe_iou=probe_iou,
        probe_dist_norm=probe_dist,
        cropper_grad_max=grad_maxes,
        encoder=trainer.encoder,
        croppers=tuple(trainer.croppers) if trainer.croppers else None,
    )
