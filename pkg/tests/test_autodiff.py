import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctxbridge.autodiff import ShapeError, Tape, finite_diff_check

from conftest import op_loss_and_grads, op_value


def test_relu_definition():
    tape = Tape()
    out = tape.relu(tape.constant([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_matmul_identity(rng):
    a = rng.normal(size=(2, 2))
    tape = Tape()
    out = tape.matmul(tape.constant(np.eye(2)), tape.constant(a))
    np.testing.assert_array_equal(out.data, a)


def test_matmul_hand_computed():
    tape = Tape()
    out = tape.matmul(tape.constant([[1.0, 2.0], [3.0, 4.0]]), tape.constant([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_shape_errors_name_op_and_shapes():
    tape = Tape()
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        tape.matmul(tape.constant(np.ones((2, 3))), tape.constant(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="conv2d"):
        tape.conv2d(tape.constant(np.ones((1, 1, 2, 2))), tape.constant(np.ones((1, 1, 3, 3))))
    with pytest.raises(ShapeError, match="add"):
        tape.add(tape.constant(np.ones(3)), tape.constant(np.ones(4)))


def test_backward_of_sum_is_ones(rng):
    tape = Tape()
    w = tape.leaf(rng.normal(size=(3, 4)), trainable=True)
    (g,) = tape.backward(tape.sum(w))
    np.testing.assert_array_equal(g, np.ones((3, 4)))


def test_backward_of_half_square_norm():
    tape = Tape()
    w = tape.leaf([3.0, 4.0], trainable=True)
    loss = tape.scale(tape.sum(tape.mul(w, w)), 0.5)
    (g,) = tape.backward(loss)
    np.testing.assert_array_equal(g, [3.0, 4.0])


def test_backward_requires_scalar():
    tape = Tape()
    w = tape.leaf(np.ones(3), trainable=True)
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(tape.relu(w))


def test_unused_trainable_leaf_gets_zero_grad():
    tape = Tape()
    a = tape.leaf(np.ones(2), trainable=True)
    tape.leaf(np.ones(3), trainable=True)
    ga, gb = tape.backward(tape.sum(a))
    np.testing.assert_array_equal(gb, np.zeros(3))


def test_tape_is_topologically_ordered(rng):
    tape = Tape()
    x = tape.leaf(rng.normal(size=(2, 3)), trainable=True)
    w = tape.leaf(rng.normal(size=(3, 2)))
    tape.sum(tape.relu(tape.matmul(x, w)))
    for i, node in enumerate(tape.nodes):
        assert all(j < i for j in node.inputs)


def test_mlp_gradient_matches_finite_differences(rng):
    x = rng.normal(size=(6, 4))
    labels = rng.integers(0, 3, size=6)

    def build(tape, w1, b1, w2, b2):
        h = tape.relu(tape.add(tape.matmul(tape.constant(x), w1), b1))
        return tape.log_softmax(tape.add(tape.matmul(h, w2), b2))

    def loss(ws):
        tape = Tape()
        leaves = [tape.leaf(w, trainable=True) for w in ws]
        out = tape.nll(build(tape, *leaves), labels)
        return out, tape

    params = [rng.normal(size=(4, 5)), rng.normal(size=5), rng.normal(size=(5, 3)), rng.normal(size=3)]
    out, tape = loss(params)
    grads = tape.backward(out)
    for i, p in enumerate(params):

        def f(v, i=i):
            ps = list(params)
            ps[i] = v
            return float(loss(ps)[0].data)

        assert finite_diff_check(f, p, grads[i], step=1e-5) < 1e-4


def test_finite_diff_check_square_norm(rng):
    w = rng.normal(size=7)
    assert finite_diff_check(lambda v: float(v @ v), w, 2 * w) < 1e-8


def test_finite_diff_check_softmax_ce(rng):
    logits = rng.normal(size=(5, 4))
    labels = rng.integers(0, 4, size=5)

    def f(z):
        tape = Tape()
        return float(tape.nll(tape.log_softmax(tape.constant(z)), labels).data)

    tape = Tape()
    z = tape.leaf(logits, trainable=True)
    (g,) = tape.backward(tape.nll(tape.log_softmax(z), labels))
    assert finite_diff_check(f, logits, g) < 1e-6


def test_finite_diff_check_mask_skips_relu_kink():
    # relu has no derivative at 0; the masked coordinate is not compared
    x = np.array([0.0, 1.5, -2.0])

    def f(v):
        return float(np.maximum(v, 0).sum())

    analytic = np.array([0.0, 1.0, 0.0])
    assert finite_diff_check(f, x, analytic) > 0.4
    assert finite_diff_check(f, x, analytic, mask=np.abs(x) > 1e-6) < 1e-8


# -- every op vs central differences, 20 random instances each -------------------

KINK = 1e-6


def _conv_case(rng):
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    return (lambda t, a, b: t.conv2d(a, b, stride, pad)), [x, w], None


def _pool_case(rng):
    x = rng.normal(size=(2, 2, 4, 5))
    win = x[:, :, :4, :4].reshape(2, 2, 2, 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(2, 2, 2, 2, 4)
    top2 = np.sort(win, axis=-1)[..., -2:]
    if np.min(top2[..., 1] - top2[..., 0]) < 10 * 1e-5:
        return None
    return (lambda t, a: t.max_pool2d(a, 2)), [x], None


def _relu_case(rng):
    x = rng.normal(size=(4, 3))
    return (lambda t, a: t.relu(a)), [x], [np.abs(x) > KINK]


OP_CASES = {
    "add": lambda r: ((lambda t, a, b: t.add(a, b)), [r.normal(size=(3, 4)), r.normal(size=4)], None),
    "mul": lambda r: ((lambda t, a, b: t.mul(a, b)), [r.normal(size=(3, 2)), r.normal(size=(3, 2))], None),
    "scale": lambda r: ((lambda t, a: t.scale(a, -1.7)), [r.normal(size=5)], None),
    "matmul": lambda r: ((lambda t, a, b: t.matmul(a, b)), [r.normal(size=(3, 4)), r.normal(size=(4, 2))], None),
    "conv2d": _conv_case,
    "relu": _relu_case,
    "max_pool2d": _pool_case,
    "flatten": lambda r: ((lambda t, a: t.flatten(a)), [r.normal(size=(2, 3, 2, 2))], None),
    "reshape": lambda r: ((lambda t, a: t.reshape(a, (3, 4))), [r.normal(size=(2, 6))], None),
    "slice": lambda r: ((lambda t, a: t.slice(a, 2, 7)), [r.normal(size=9)], None),
    "sum": lambda r: ((lambda t, a: t.sum(a)), [r.normal(size=(2, 3))], None),
    "log_softmax": lambda r: ((lambda t, a: t.log_softmax(a)), [r.normal(size=(4, 5))], None),
    "nll": lambda r: (
        (lambda t, a, lab=r.integers(0, 5, size=4), wt=r.uniform(1, 3, size=4): t.nll(a, lab, wt)),
        [r.normal(size=(4, 5))],
        None,
    ),
}


@pytest.mark.parametrize("op", sorted(OP_CASES))
def test_op_backward_matches_central_differences(op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    done = 0
    while done < 20:
        case = OP_CASES[op](rng)
        if case is None:
            continue
        build, inputs, masks = case
        _, grads = op_loss_and_grads(build, inputs, proj_seed=done)
        for i, x in enumerate(inputs):

            def f(v, i=i):
                xs = list(inputs)
                xs[i] = v
                return op_value(build, xs, proj_seed=done)

            mask = masks[i] if masks else None
            assert finite_diff_check(f, x, grads[i], step=1e-5, mask=mask) < 1e-4, (op, done, i)
        done += 1


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    stride, pad = 2, 1
    tape = Tape()
    out = tape.conv2d(tape.constant(x), tape.constant(w), stride, pad).data
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = (6 + 2 - 3) // 2 + 1, (5 + 2 - 3) // 2 + 1
    ref = np.zeros((2, 4, oh, ow))
    for n in range(2):
        for o in range(4):
            for i in range(oh):
                for j in range(ow):
                    ref[n, o, i, j] = (xp[n, :, i * 2 : i * 2 + 3, j * 2 : j * 2 + 3] * w[o]).sum()
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 8)), elements=st.floats(-50, 50)))
def test_log_softmax_rows_sum_to_one(z):
    tape = Tape()
    out = tape.log_softmax(tape.constant(z)).data
    np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-12)


def test_same_tape_twice_gives_identical_gradients(rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))

    def run():
        tape = Tape()
        wl = tape.leaf(w, trainable=True)
        loss = tape.nll(tape.log_softmax(tape.matmul(tape.constant(x), wl)), [0, 1, 1])
        return tape.backward(loss)[0]

    assert run().tobytes() == run().tobytes()


def test_tensors_are_read_only(rng):
    tape = Tape()
    t = tape.constant(rng.normal(size=3))
    with pytest.raises(ValueError):
        t.data[0] = 1.0


def test_nll_rejects_out_of_range_labels():
    tape = Tape()
    with pytest.raises(ValueError, match="labels"):
        tape.nll(tape.constant(np.zeros((2, 3))), [0, 3])
