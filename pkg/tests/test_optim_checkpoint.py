import numpy as np
import pytest

from charlee.errors import ConfigurationError, InputError
from charlee.numerics import (
    AdamState,
    ParamStore,
    RngStream,
    adam_step,
    load_tensors,
    save_tensors,
    tsum,
)


def make_store(values):
    store = ParamStore()
    store.create("w", np.asarray(values, dtype=np.float64))
    return store


def test_adam_zero_gradient_leaves_params():
    store = make_store([1.0, -2.0])
    state = AdamState(store)
    adam_step(store, state)
    np.testing.assert_array_equal(store["w"].values, [1.0, -2.0])


def test_adam_first_step_magnitude():
    # With constant gradient g, the bias-corrected first step is lr * sign(g)
    # up to the eps term.
    store = make_store([0.0])
    state = AdamState(store, learning_rate=1e-3)
    store["w"].grad = np.array([2.5])
    adam_step(store, state)
    assert store["w"].values[0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_converges_on_quadratic():
    store = make_store([3.0])
    state = AdamState(store, learning_rate=0.05)
    for _ in range(500):
        w = store["w"]
        loss = tsum(w * w)
        loss.backward()
        adam_step(store, state)
    assert abs(store["w"].values[0]) < 1e-3


def test_adam_zeroes_grads_and_counts_steps():
    store = make_store([1.0])
    state = AdamState(store)
    store["w"].grad = np.array([1.0])
    adam_step(store, state)
    assert store["w"].grad is None
    assert state.step_count == 1
    adam_step(store, state)
    assert state.step_count == 2


def test_param_store_rejects_duplicates():
    store = make_store([1.0])
    with pytest.raises(ConfigurationError):
        store.create("w", np.zeros(2))


def test_glorot_init_bounds():
    store = ParamStore()
    t = store.glorot("k", (50, 40), fan_in=40, fan_out=50, rng=RngStream(0, "init"))
    limit = np.sqrt(6.0 / 90.0)
    assert np.all(np.abs(t.values) <= limit)
    assert t.values.std() > 0.1 * limit


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    tensors = {
        "a": rng.normal(size=(3, 4)),
        "deep/nested.name": rng.normal(size=7),
        "scalar": np.float64(3.25),
        "empty_rank0": np.array(1.5),
    }
    path = tmp_path / "params.bin"
    save_tensors(path, tensors)
    loaded = load_tensors(path)
    assert set(loaded) == set(tensors)
    for name in tensors:
        orig = np.asarray(tensors[name], dtype=np.float64)
        assert loaded[name].shape == orig.shape
        assert loaded[name].tobytes() == orig.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(InputError):
        load_tensors(path)


def test_rng_streams_independent_and_reproducible():
    a1 = RngStream(5, "init").normal(size=4)
    a2 = RngStream(5, "init").normal(size=4)
    b = RngStream(5, "shuffle").normal(size=4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.allclose(a1, b)


def test_rng_subkeys_give_distinct_streams():
    e0 = RngStream(5, "shuffle", 0).permutation(10)
    e1 = RngStream(5, "shuffle", 1).permutation(10)
    e0_again = RngStream(5, "shuffle", 0).permutation(10)
    np.testing.assert_array_equal(e0, e0_again)
    assert not np.array_equal(e0, e1)
