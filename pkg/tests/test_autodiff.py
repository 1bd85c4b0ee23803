import numpy as np
import pytest

from vpet.autodiff import tensor as T
from vpet.autodiff.checkpoint import CheckpointError, dumps, load, loads, save
from vpet.autodiff.gradcheck import check_gradients, relative_error
from vpet.autodiff.nn import MLP, Linear, clamp_log_sigma, fourier_dim, fourier_embed, kl_diag_gaussian, time_embeddings
from vpet.autodiff.optim import Adam, AdamState, adam_step
from vpet.autodiff.tensor import ShapeError, Tensor

from gradcases import ENCODER_CASES, OP_CASES, OP_TOL, run_case


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients(name):
    assert run_case(OP_CASES[name], trials=3, seed=1) < OP_TOL


@pytest.mark.parametrize("name", sorted(ENCODER_CASES))
def test_encoder_gradients(name):
    assert run_case(ENCODER_CASES[name], trials=3, seed=2) < OP_TOL


def test_shared_node_gradients_accumulate():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = x * x + x
    T.tsum(y * y).backward()
    # d/dx (x^2 + x)^2 = 2 (x^2 + x)(2x + 1)
    np.testing.assert_allclose(x.grad, 2 * (x.data**2 + x.data) * (2 * x.data + 1))


def test_long_tape_does_not_recurse():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 1e-4 * x
    y.backward()
    assert x.grad == pytest.approx(1.0 + 5000 * 1e-4)


def test_backward_needs_scalar_or_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2).backward()


def test_broadcast_mismatch_raises():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_linear_rejects_wrong_width():
    lin = Linear(3, 2, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        lin(Tensor(np.ones((1, 4))))


def test_relative_error_scale():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_gradcheck_detects_wrong_backward():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)

    def bad():
        out = T._node(x.data**2, (x,), lambda g: ((x, g * x.data),))  # missing factor 2
        return T.tsum(out)

    assert check_gradients(bad, [x]) > 0.4


def test_fourier_layout():
    x = np.array([[0.25]])
    out = fourier_embed(x, 2).data
    assert out.shape == (1, fourier_dim(1, 2))
    np.testing.assert_allclose(out[0], [0.25, np.sin(np.pi / 4), np.sin(np.pi / 2), np.cos(np.pi / 4), np.cos(np.pi / 2)])


def test_time_embedding_table():
    tab = time_embeddings(4, 6).data
    assert tab.shape == (4, 6)
    np.testing.assert_allclose(tab[0, 0::2], 0.0)
    np.testing.assert_allclose(tab[0, 1::2], 1.0)


def test_kl_zero_at_prior():
    assert kl_diag_gaussian(np.zeros((2, 3)), np.zeros((2, 3))).item() == 0.0
    assert kl_diag_gaussian(np.ones((2, 3)), np.zeros((2, 3))).item() == pytest.approx(1.5)


def test_clamp_log_sigma_bounds():
    out = clamp_log_sigma(Tensor(np.array([-50.0, 0.0, 50.0]))).data
    assert out[0] == -8.0 and out[1] == 0.0 and out[2] == 4.0


def test_adam_matches_reference():
    rng = np.random.default_rng(0)
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    p0 = p.data.copy()
    grads = [rng.standard_normal(4) for _ in range(3)]
    state = AdamState(lr=0.1)
    for g in grads:
        adam_step(state, {"p": p}, {"p": g})
    m = np.zeros(4)
    v = np.zeros(4)
    ref = p0.copy()
    for t, g in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=0, atol=1e-15)


def test_adam_minimises_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        T.tsum(T.square(x)).backward()
        opt.step()
    assert np.abs(x.data).max() < 1e-2


def test_module_state_dict_round_trip():
    rng = np.random.default_rng(0)
    a, b = MLP([3, 4, 2], rng), MLP([3, 4, 2], rng)
    b.load_state_dict(a.state_dict())
    x = Tensor(rng.standard_normal((5, 3)))
    np.testing.assert_array_equal(a(x).data, b(x).data)
    with pytest.raises(KeyError):
        b.load_state_dict({})


def test_checkpoint_bytes_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    entries = {"a": rng.standard_normal((2, 3)), "b": np.array(1.5), "c": rng.standard_normal(0)}
    save(tmp_path / "x.vpet", entries, {"k": [1, 2]})
    back, meta = load(tmp_path / "x.vpet")
    assert meta == {"k": [1, 2]}
    for k in entries:
        assert back[k].shape == entries[k].shape
        assert back[k].tobytes() == entries[k].tobytes()


def test_checkpoint_rejects_corruption():
    blob = dumps({"a": np.ones(3)})
    with pytest.raises(CheckpointError):
        loads(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        loads(blob[:-3])
    with pytest.raises(CheckpointError):
        loads(blob + b"\0")
