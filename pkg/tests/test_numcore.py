import threading

import numpy as np
import pytest

from cmdse import numcore as nc
from cmdse.numcore import AdamW, ShapeError, Tensor, adamw_step, backward, no_grad
from cmdse.numcore.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_arrays
from cmdse.numcore.gradcheck import check_gradients


def leaf(rng, *shape, positive=False):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def test_matmul_identity():
    out = nc.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.eye(2)))
    assert np.array_equal(out.data, [[1, 2], [3, 4]])


def test_softmax_uniform_and_sigmoid_zero():
    assert np.allclose(nc.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=0, rtol=1e-15)
    assert nc.sigmoid(Tensor(0.0)).item() == 0.5


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(0).normal(scale=30, size=(7, 13)))
    s = nc.softmax(x, axis=-1).data.sum(-1)
    assert np.max(np.abs(s - 1.0)) < 1e-12


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(nc.tsum(x * x))
    assert np.array_equal(x.grad, [2.0, 4.0, 6.0])


def test_detached_tensor_has_no_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([3.0, 4.0])
    backward(nc.tsum(x * c))
    assert c.grad is None
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        backward(x * 2.0)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        nc.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)
    with pytest.raises(ShapeError):
        nc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    # only suffix (leading-dimension) broadcasting is allowed
    with pytest.raises(ShapeError):
        nc.mul(Tensor(np.ones((4, 1))), Tensor(np.ones(3)))


def test_leading_dimension_broadcast_gradient():
    rng = np.random.default_rng(1)
    a, b = leaf(rng, 5, 3), leaf(rng, 3)
    backward(nc.tsum(nc.mul(a, b)))
    assert np.allclose(b.grad, a.data.sum(0))


# one entry per differentiable op: (builder, input factories)
OPS = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 4)]),
    "mul": (lambda a, b: a * b, [(2, 3, 4), (3, 4)]),
    "div": (lambda a, b: a / b, [(3, 4), ("pos", 3, 4)]),
    "matmul": (lambda a, b: nc.matmul(a, b), [(2, 3, 4), (4, 5)]),
    "exp": (lambda a: nc.exp(a), [(3, 4)]),
    "log": (lambda a: nc.log(a), [("pos", 3, 4)]),
    "sin": (lambda a: nc.sin(a), [(6,)]),
    "cos": (lambda a: nc.cos(a), [(6,)]),
    "sigmoid": (lambda a: nc.sigmoid(a), [(3, 4)]),
    "log_sigmoid": (lambda a: nc.log_sigmoid(a), [(3, 4)]),
    "power": (lambda a: nc.power(a, 2.5), [("pos", 3, 4)]),
    "sqrt": (lambda a: nc.sqrt(a), [("pos", 5,)]),
    "gelu": (lambda a: nc.gelu(a), [(3, 4)]),
    "softmax": (lambda a: nc.softmax(a, axis=-1), [(3, 5)]),
    "layer_norm": (lambda a: nc.layer_norm(a), [(3, 6)]),
    "l2_normalize": (lambda a: nc.l2_normalize(a), [(3, 6)]),
    "transpose": (lambda a: nc.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    "reshape": (lambda a: nc.reshape(a, (6, 2)), [(3, 4)]),
    "concat": (lambda a, b: nc.concat([a, b], axis=1), [(3, 2), (3, 4)]),
    "getitem": (lambda a: a[1:, ::2], [(3, 4)]),
    "take": (lambda a: nc.take(a, np.array([2, 0, 2]), axis=0), [(3, 4)]),
    "sum": (lambda a: nc.tsum(a, axis=0), [(3, 4)]),
    "mean": (lambda a: nc.mean(a, axis=-1, keepdims=True), [(3, 4)]),
    "broadcast_to": (lambda a: nc.broadcast_to(a, (5, 3, 4)), [(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(4))
def test_op_gradients_match_finite_differences(name, seed):
    fn, shapes = OPS[name]
    rng = np.random.default_rng([seed, len(name)])
    inputs = []
    for s in shapes:
        pos = s[0] == "pos"
        inputs.append(leaf(rng, *(s[1:] if pos else s), positive=pos))
    weights = Tensor(rng.normal(size=fn(*inputs).shape))

    def loss():
        return nc.tsum(fn(*inputs) * weights)

    worst = check_gradients(loss, inputs)
    assert max(worst.values()) < 1e-4, worst


def test_composite_graph_gradients():
    rng = np.random.default_rng(5)
    w1, w2, x = leaf(rng, 4, 6), leaf(rng, 6, 3), Tensor(rng.normal(size=(5, 4)))

    def loss():
        h = nc.layer_norm(nc.gelu(nc.matmul(x, w1)))
        p = nc.softmax(nc.matmul(h, w2), axis=-1)
        return nc.mean(nc.log(p + 1e-3) * p)

    worst = check_gradients(loss, [w1, w2])
    assert max(worst.values()) < 1e-4


def test_forward_deterministic():
    def run():
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=(4, 4)))
        return nc.softmax(nc.matmul(a, a), axis=0).data

    assert np.array_equal(run(), run())


def test_no_grad_is_thread_local():
    seen = {}

    def worker():
        seen["inner"] = nc.is_grad_enabled()

    with no_grad():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
        assert not nc.is_grad_enabled()
    assert seen["inner"] is True


# -- optimizer ------------------------------------------------------------------------

def test_adamw_zero_grad_zero_decay_unchanged():
    w = Tensor(np.array([0.7, -1.2]), requires_grad=True)
    w.grad = np.zeros(2)
    adamw_step([w], lr=0.1, weight_decay=0.0)
    assert np.array_equal(w.data, [0.7, -1.2])


def test_adamw_single_step_descends():
    w = Tensor(np.array([1.0]), requires_grad=True)
    backward(nc.tsum(w * w))
    adamw_step([w], lr=0.1)
    assert abs(w.data[0]) < 1.0


def test_adamw_matches_reference_rule():
    rng = np.random.default_rng(2)
    w = Tensor(rng.normal(size=3), requires_grad=True)
    ref = w.data.copy()
    m = np.zeros(3)
    v = np.zeros(3)
    opt = AdamW([w], lr=0.05, weight_decay=0.1)
    for t in range(1, 6):
        g = rng.normal(size=3)
        w.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * 0.1 * ref
        ref = ref - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(w.data, ref, rtol=1e-12, atol=1e-14)


def test_adamw_decay_is_decoupled():
    w = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW([w], lr=0.1, weight_decay=0.5)
    w.grad = np.zeros(1)
    opt.step()
    assert np.array_equal(opt.m[0], [0.0]) and np.array_equal(opt.v[0], [0.0])
    assert w.data[0] == pytest.approx(2.0 * (1 - 0.05))


def test_adamw_quadratic_monotone_after_warmup():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = AdamW([w], lr=0.05, weight_decay=0.0)
    losses = []
    for _ in range(100):
        opt.zero_grad()
        loss = nc.tsum(w * w)
        losses.append(loss.item())
        backward(loss)
        opt.step()
    tail = np.array(losses[10:])
    assert np.all(np.diff(tail) <= 1e-12)


def test_adamw_missing_grad_raises():
    w = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(RuntimeError, match="no gradient"):
        adamw_step([w], lr=0.1)


# -- checkpoint -----------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "scalar": np.array(1.5), "empty": np.zeros((0, 4))}
    path = tmp_path / "x.ckpt"
    save_arrays(path, arrays, meta={"step": 3})
    back, meta = load_checkpoint(path)
    assert meta == {"step": 3}
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape and np.array_equal(back[k], arrays[k])


def test_checkpoint_byte_layout(tmp_path):
    path = tmp_path / "x.ckpt"
    save_arrays(path, {"w": np.array([1.0, -2.0])})
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    n = int.from_bytes(raw[8:16], "little")
    start = 16 + n + (-(16 + n)) % 8
    assert np.array_equal(np.frombuffer(raw[start:start + 16], dtype="<f8"), [1.0, -2.0])


def test_checkpoint_bytes_stable(tmp_path):
    arrays = {"b": np.ones(3), "a": np.zeros((2, 2))}
    save_arrays(tmp_path / "1", arrays, {"k": 1})
    save_arrays(tmp_path / "2", dict(arrays), {"k": 1})
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_checkpoint_corruption_detected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_arrays(path, {"w": np.ones(10)})
    raw = path.read_bytes()
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "magic").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "magic")
    (tmp_path / "tiny").write_bytes(raw[:10])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "tiny")
