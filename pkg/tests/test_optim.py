import numpy as np
import pytest

from lskt.errors import ContractError, DimensionError
from lskt.optim import OptimizerState, adamw_step, clip_grad_norm, global_grad_norm
from lskt.params import ParameterStore, read_arrays, write_arrays


def store_with(**arrays):
    s = ParameterStore()
    for k, v in arrays.items():
        s.add(k, v)
    return s


class TestAdamW:
    def test_decay_only_path(self):
        s = store_with(w=[1.0, -2.0, 3.0])
        adamw_step(s, OptimizerState(), lr=0.1, weight_decay=0.01)
        np.testing.assert_array_equal(s["w"].data, np.array([1.0, -2.0, 3.0]) * (1 - 0.1 * 0.01))

    def test_first_step_is_lr_times_sign(self):
        g = np.array([0.3, -2.0, 1e-3])
        s = store_with(w=[0.5, 0.5, 0.5])
        s["w"].grad = g.copy()
        adamw_step(s, OptimizerState(), lr=1e-3, eps=1e-8, weight_decay=0.0)
        # bias-corrected moments equal g and g**2 after one step
        expected = 0.5 - 1e-3 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(s["w"].data, expected, rtol=0, atol=1e-15)
        np.testing.assert_allclose(np.abs(0.5 - s["w"].data), 1e-3, rtol=1e-5)

    def test_identical_params_stay_identical(self, rng):
        g = rng.normal(size=4)
        s = store_with(a=np.ones(4), b=np.ones(4))
        state = OptimizerState()
        for _ in range(5):
            s["a"].grad, s["b"].grad = g.copy(), g.copy()
            adamw_step(s, state)
        np.testing.assert_array_equal(s["a"].data, s["b"].data)

    def test_step_counter_and_grads_untouched(self, rng):
        s = store_with(w=np.ones(3))
        g = rng.normal(size=3)
        s["w"].grad = g.copy()
        state = OptimizerState()
        adamw_step(s, state)
        adamw_step(s, state)
        assert state.step == 2
        np.testing.assert_array_equal(s["w"].grad, g)

    def test_zero_lr_is_noop(self, rng):
        s = store_with(w=rng.normal(size=5))
        before = s["w"].data.copy()
        s["w"].grad = rng.normal(size=5)
        adamw_step(s, OptimizerState(), lr=0.0, weight_decay=0.01)
        np.testing.assert_array_equal(s["w"].data, before)


class TestClipping:
    def test_rescales_to_max_norm(self):
        s = store_with(a=np.zeros(2), b=np.zeros(1))
        s["a"].grad = np.array([3.0, 0.0])
        s["b"].grad = np.array([4.0])
        assert clip_grad_norm(s, 1.0) == pytest.approx(5.0)
        assert global_grad_norm(s) == pytest.approx(1.0)

    def test_small_norm_untouched(self):
        s = store_with(a=np.zeros(2))
        s["a"].grad = np.array([0.3, 0.4])
        clip_grad_norm(s, 5.0)
        np.testing.assert_array_equal(s["a"].grad, [0.3, 0.4])


class TestStore:
    def test_duplicate_name_rejected(self):
        s = store_with(a=[1.0])
        with pytest.raises(ContractError):
            s.add("a", [2.0])

    def test_zero_grad(self):
        s = store_with(a=[1.0, 2.0])
        s["a"].grad += 3
        s.zero_grad()
        np.testing.assert_array_equal(s["a"].grad, [0, 0])

    def test_uniform_bounds(self, rng):
        s = ParameterStore()
        w = s.uniform("w", (16, 4), rng)
        assert np.abs(w.data).max() <= 0.25

    def test_round_trip(self, tmp_path, rng):
        s = store_with(a=rng.normal(size=(2, 3)), b=rng.normal(size=(4,)))
        s.save(tmp_path / "p")
        t = store_with(a=np.zeros((2, 3)), b=np.zeros(4))
        t.load_into(tmp_path / "p")
        for k in ("a", "b"):
            np.testing.assert_array_equal(s[k].data, t[k].data)

    def test_blob_is_little_endian_float64(self, tmp_path):
        write_arrays(tmp_path, {"x": np.array([1.5, -2.0])})
        raw = (tmp_path / "x.f64").read_bytes()
        assert raw == np.array([1.5, -2.0], dtype="<f8").tobytes()
        arrays, _ = read_arrays(tmp_path)
        np.testing.assert_array_equal(arrays["x"], [1.5, -2.0])

    def test_shape_mismatch_names_both(self, tmp_path):
        store_with(a=np.zeros((2, 3))).save(tmp_path)
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(3, 3\)"):
            store_with(a=np.zeros((3, 3))).load_into(tmp_path)

    def test_optimizer_state_round_trip(self, tmp_path, rng):
        s = store_with(w=rng.normal(size=3))
        s["w"].grad = rng.normal(size=3)
        state = OptimizerState()
        adamw_step(s, state)
        state.save(tmp_path)
        back = OptimizerState.load(tmp_path)
        assert back.step == 1
        np.testing.assert_array_equal(back.first["w"], state.first["w"])
        np.testing.assert_array_equal(back.second["w"], state.second["w"])
