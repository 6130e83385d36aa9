"""Tests for the crop-parameter generator, its optimiser, and checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from paramcrop.affine import ParamBounds
from paramcrop.errors import ConfigError, TensorFileError, TrainingError
from paramcrop.paramgen import (
    CropperState,
    SgdMomentum,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    reverse_gradient,
    sample_noise,
    save_checkpoint,
    update_weights,
)


@pytest.fixture
def state():
    rng = np.random.default_rng(42)
    return CropperState.initialise(rng, noise_dim=5, hidden_dim=7, init_scale=0.2)


class TestState:
    def test_shapes_and_dims(self, state):
        assert state.w1.shape == (7, 5)
        assert state.w2.shape == (6, 7)
        assert state.noise_dim == 5
        assert state.hidden_dim == 7

    def test_init_scale_respected(self):
        rng = np.random.default_rng(0)
        s = CropperState.initialise(rng, init_scale=0.01)
        assert np.abs(s.w1).max() <= 0.01
        assert np.abs(s.w2).max() <= 0.01

    def test_bad_dims(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            CropperState.initialise(rng, noise_dim=0)


class TestForward:
    def test_output_shape_and_range(self, state):
        rng = np.random.default_rng(1)
        noise = sample_noise(rng, state.noise_dim)
        assert noise.shape == (5,)
        assert np.all((noise >= 0.0) & (noise < 1.0))
        unit, cache = mlp_forward(noise, state)
        assert unit.shape == (6,)
        assert np.all((unit > 0.0) & (unit < 1.0))
        np.testing.assert_array_equal(cache.noise, noise)
        np.testing.assert_array_equal(cache.hidden,
                                      np.maximum(cache.hidden_pre, 0.0))

    def test_matches_manual_composition(self, state):
        rng = np.random.default_rng(2)
        noise = sample_noise(rng, state.noise_dim)
        unit, _ = mlp_forward(noise, state)
        hidden = np.maximum(state.w1 @ noise, 0.0)
        expected = 1.0 / (1.0 + np.exp(-(state.w2 @ hidden)))
        np.testing.assert_allclose(unit, expected, atol=1e-15)

    def test_near_zero_init_gives_centered_outputs(self):
        rng = np.random.default_rng(3)
        s = CropperState.initialise(rng, init_scale=0.01)
        unit, _ = mlp_forward(sample_noise(rng, s.noise_dim), s)
        np.testing.assert_allclose(unit, np.full(6, 0.5), atol=0.01)


class TestBackward:
    def test_matches_finite_differences(self, state):
        rng = np.random.default_rng(4)
        noise = sample_noise(rng, state.noise_dim)
        upstream = rng.normal(size=6)
        _, cache = mlp_forward(noise, state)
        grad_w1, grad_w2 = mlp_backward(upstream, cache, state)
        assert grad_w1.shape == state.w1.shape
        assert grad_w2.shape == state.w2.shape

        h = 1e-6

        def loss(w1: np.ndarray, w2: np.ndarray) -> float:
            s = CropperState(w1=w1, w2=w2, bounds=state.bounds)
            unit, _ = mlp_forward(noise, s)
            return float(np.dot(upstream, unit))

        for grad, which in ((grad_w1, "w1"), (grad_w2, "w2")):
            w = getattr(state, which)
            flat_idx = [(i, j) for i in range(w.shape[0]) for j in range(w.shape[1])]
            rng_pick = np.random.default_rng(5)
            for i, j in [flat_idx[k] for k in
                         rng_pick.choice(len(flat_idx), size=12, replace=False)]:
                bumped = w.copy()
                bumped[i, j] += h
                up = loss(bumped if which == "w1" else state.w1,
                          bumped if which == "w2" else state.w2)
                bumped[i, j] -= 2 * h
                down = loss(bumped if which == "w1" else state.w1,
                            bumped if which == "w2" else state.w2)
                fd = (up - down) / (2 * h)
                assert grad[i, j] == pytest.approx(fd, abs=1e-7), (which, i, j)

    def test_dead_relu_units_get_zero_gradient(self, state):
        noise = np.ones(state.noise_dim)
        _, cache = mlp_forward(noise, state)
        dead = cache.hidden_pre <= 0.0
        assert dead.any(), "fixture should produce at least one inactive unit"
        grad_w1, _ = mlp_backward(np.ones(6), cache, state)
        np.testing.assert_array_equal(grad_w1[dead], 0.0)


class TestReversal:
    def test_exact_negation(self):
        rng = np.random.default_rng(6)
        g = rng.normal(size=(4, 9)) * 10.0 ** rng.integers(-8, 8, size=(4, 9))
        out = reverse_gradient(g)
        np.testing.assert_array_equal(out, -g)
        # negation must be bitwise exact, including signed zeros
        z = reverse_gradient(np.array([0.0, -0.0]))
        assert np.signbit(z[0]) and not np.signbit(z[1])


class TestOptimiser:
    def test_two_steps_by_hand(self):
        opt = SgdMomentum(lr=0.1, momentum=0.5)
        p = {"w": np.array([1.0, 2.0])}
        g1 = {"w": np.array([1.0, -1.0])}
        p = opt.step(p, g1)
        # velocity = g1; w = [1,2] - 0.1*[1,-1]
        np.testing.assert_allclose(p["w"], [0.9, 2.1], atol=1e-15)
        g2 = {"w": np.array([0.0, 0.0])}
        p = opt.step(p, g2)
        # velocity = 0.5*[1,-1]; w = [0.9,2.1] - 0.1*[0.5,-0.5]
        np.testing.assert_allclose(p["w"], [0.85, 2.15], atol=1e-15)

    def test_velocity_persists_per_name(self):
        opt = SgdMomentum(lr=1.0, momentum=1.0)
        p = {"a": np.zeros(1), "b": np.zeros(1)}
        for _ in range(3):
            p = opt.step(p, {"a": np.ones(1), "b": np.full(1, 2.0)})
        # with momentum 1 and unit grads: velocities 1, 2, 3 -> sum 6
        assert p["a"][0] == -6.0
        assert p["b"][0] == -12.0

    def test_non_finite_gradient_raises(self):
        opt = SgdMomentum(lr=0.1)
        with pytest.raises(TrainingError, match="step 17"):
            opt.step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])},
                     step_index=17)

    def test_update_weights_returns_new_state(self, state):
        opt = SgdMomentum(lr=0.5, momentum=0.0)
        g1 = np.ones_like(state.w1)
        g2 = np.ones_like(state.w2)
        new = update_weights(state, g1, g2, opt)
        assert new is not state
        np.testing.assert_allclose(new.w1, state.w1 - 0.5, atol=1e-15)
        np.testing.assert_allclose(new.w2, state.w2 - 0.5, atol=1e-15)
        assert new.bounds is state.bounds


class TestCheckpoint:
    def test_round_trip(self, tmp_path, state):
        save_checkpoint(state, tmp_path, seed=123)
        loaded, manifest = load_checkpoint(tmp_path)
        np.testing.assert_array_equal(loaded.w1, state.w1)
        np.testing.assert_array_equal(loaded.w2, state.w2)
        assert loaded.bounds == state.bounds
        assert manifest["seed"] == "123"

    def test_round_trip_custom_bounds(self, tmp_path):
        bounds = ParamBounds(spatial_scale_range=(0.25, 0.75),
                             temporal_scale_range=(0.4, 0.9),
                             angle_range=(-0.1, 0.2),
                             detach_bound=0.35)
        rng = np.random.default_rng(9)
        st = CropperState.initialise(rng, noise_dim=3, hidden_dim=4, bounds=bounds)
        save_checkpoint(st, tmp_path)
        loaded, _ = load_checkpoint(tmp_path)
        assert loaded.bounds == bounds

    def test_manifest_shape_mismatch_detected(self, tmp_path, state):
        save_checkpoint(state, tmp_path)
        manifest = (tmp_path / "manifest.txt").read_text()
        (tmp_path / "manifest.txt").write_text(
            manifest.replace("noise_dim = 5", "noise_dim = 6"))
        with pytest.raises(TensorFileError):
            load_checkpoint(tmp_path)

    def test_missing_manifest_key(self, tmp_path, state):
        save_checkpoint(state, tmp_path)
        manifest = (tmp_path / "manifest.txt").read_text()
        kept = "\n".join(line for line in manifest.splitlines()
                         if not line.startswith("detach_bound"))
        (tmp_path / "manifest.txt").write_text(kept + "\n")
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path)
