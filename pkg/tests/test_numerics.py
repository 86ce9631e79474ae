import math

import numpy as np
import pytest

from vibcap import numerics as nm
from vibcap.numerics import (
    DomainError,
    ParamStore,
    ShapeError,
    Tensor,
    backward,
    constant,
    grad_check,
)


def leaf(arr):
    """Trainable leaf for gradient tests."""
    return Tensor(np.asarray(arr, dtype=np.float64), requires=True)


def fd_check_all(build, inputs, tol=1e-6, step=1e-5):
    """Central finite differences over every coordinate of every input."""
    ts = [leaf(x) for x in inputs]
    out = build(*ts)
    loss = nm.reduce_sum(nm.mul(out, constant(_weights(out.data.shape))))
    backward(loss)
    for t in ts:
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for c in range(flat.size):
            orig = flat[c]
            flat[c] = orig + step
            hi = float(nm.reduce_sum(nm.mul(build(*ts), constant(_weights(out.data.shape)))).data)
            flat[c] = orig - step
            lo = float(nm.reduce_sum(nm.mul(build(*ts), constant(_weights(out.data.shape)))).data)
            flat[c] = orig
            numeric = (hi - lo) / (2 * step)
            assert nm.rel_err(float(grad.reshape(-1)[c]), numeric) < tol, (
                f"coordinate {c}: analytic={grad.reshape(-1)[c]} numeric={numeric}"
            )


def _weights(shape):
    # fixed non-uniform weights so reductions exercise every output entry
    n = int(np.prod(shape)) if shape else 1
    return (np.arange(1, n + 1, dtype=np.float64) / n).reshape(shape)


# ---------------------------------------------------------------------------
# forward oracles


def test_sigmoid_at_zero():
    assert float(nm.sigmoid(constant(0.0)).data) == 0.5


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    out = nm.matmul(constant(np.eye(3)), constant(a))
    np.testing.assert_array_equal(out.data, np.eye(3) @ a)
    np.testing.assert_allclose(out.data, a, rtol=0, atol=0)


def test_softmax_matches_high_precision_oracle():
    import mpmath

    mpmath.mp.dps = 50
    x = [1.0, 2.0, 3.0]
    es = [mpmath.exp(v) for v in x]
    tot = sum(es)
    expected = np.array([float(e / tot) for e in es])
    got = nm.softmax(constant(np.array(x))).data
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_log_rejects_non_positive():
    with pytest.raises(DomainError):
        nm.log(constant(np.array([1.0, 0.0])))
    with pytest.raises(DomainError):
        nm.log(constant(np.array([-1.0])))


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as e:
        nm.add(constant(np.zeros((2, 3))), constant(np.zeros((3, 2))))
    assert "(2, 3)" in str(e.value) and "(3, 2)" in str(e.value)
    with pytest.raises(ShapeError) as e:
        nm.matmul(constant(np.zeros((2, 3))), constant(np.zeros((2, 3))))
    assert "(2, 3)" in str(e.value)


def test_leading_broadcast_only():
    # suffix shape broadcasts across leading axes; anything else is an error
    out = nm.add(constant(np.ones((4, 3))), constant(np.arange(3.0)))
    np.testing.assert_array_equal(out.data, np.ones((4, 3)) + np.arange(3.0))
    with pytest.raises(ShapeError):
        nm.add(constant(np.ones((3, 4))), constant(np.arange(3.0)))


# ---------------------------------------------------------------------------
# backward basics


def test_backward_square():
    x = leaf(3.0)
    y = nm.mul(x, x)
    backward(y)
    assert x.grad == pytest.approx(6.0, abs=0)


def test_backward_rejects_non_scalar():
    x = leaf(np.ones(3))
    with pytest.raises(ShapeError):
        backward(nm.mul(x, x))


def test_backward_accumulates_without_reset():
    x = leaf(2.0)
    backward(nm.mul(x, x))
    backward(nm.mul(x, x))
    assert x.grad == pytest.approx(8.0)


def test_sigmoid_matvec_gradient_vs_fd():
    rng = np.random.default_rng(1)
    W = leaf(rng.normal(size=(4, 5)))
    xv = constant(rng.normal(size=(5, 1)))

    def f():
        return nm.reduce_sum(nm.sigmoid(nm.matmul(W, xv)))

    loss = f()
    backward(loss)
    step = 1e-5
    flat = W.data.reshape(-1)
    for c in range(flat.size):
        orig = flat[c]
        flat[c] = orig + step
        hi = float(f().data)
        flat[c] = orig - step
        lo = float(f().data)
        flat[c] = orig
        numeric = (hi - lo) / (2 * step)
        assert nm.rel_err(float(W.grad.reshape(-1)[c]), numeric) < 1e-6


# ---------------------------------------------------------------------------
# per-op finite-difference property sweep (100 random cases per op, float64)

N_CASES = 100


def _rand(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


def _case_shapes(rng):
    r = int(rng.integers(1, 5))
    c = int(rng.integers(1, 5))
    return r, c


@pytest.mark.parametrize("op", [
    "add", "sub", "mul", "div", "matmul", "sin", "cos", "exp", "log",
    "sigmoid", "tanh", "abs", "square", "sqrt", "gelu", "softmax",
    "log_softmax", "layer_norm", "concat", "slice", "transpose", "reshape",
    "reduce_sum", "reduce_mean", "sq_norm", "conv1d", "max_pool", "pool_to",
    "embedding", "gather",
])
def test_op_gradients_match_finite_differences(op):
    rng = np.random.default_rng(hash(op) % (2**32))
    for _ in range(N_CASES):
        r, c = _case_shapes(rng)
        if op == "add":
            fd_check_all(nm.add, [_rand(rng, (r, c)), _rand(rng, (r, c))])
        elif op == "sub":
            fd_check_all(nm.sub, [_rand(rng, (r, c)), _rand(rng, (r, c))])
        elif op == "mul":
            fd_check_all(nm.mul, [_rand(rng, (r, c)), _rand(rng, (r, c))])
        elif op == "div":
            denom = _rand(rng, (r, c), 0.5, 2.0) * rng.choice([-1.0, 1.0], size=(r, c))
            fd_check_all(nm.div, [_rand(rng, (r, c)), denom])
        elif op == "matmul":
            k = int(rng.integers(1, 5))
            fd_check_all(nm.matmul, [_rand(rng, (r, k)), _rand(rng, (k, c))])
        elif op in ("sin", "cos", "exp", "sigmoid", "tanh", "square", "gelu"):
            fd_check_all(getattr(nm, op if op != "abs" else "absolute"), [_rand(rng, (r, c))])
        elif op == "log":
            fd_check_all(nm.log, [_rand(rng, (r, c), 0.2, 3.0)])
        elif op == "sqrt":
            fd_check_all(nm.sqrt, [_rand(rng, (r, c), 0.2, 3.0)])
        elif op == "abs":
            x = _rand(rng, (r, c))
            x = np.where(np.abs(x) < 1e-3, x + 0.5, x)  # keep away from the kink
            fd_check_all(nm.absolute, [x])
        elif op == "softmax":
            fd_check_all(lambda t: nm.softmax(t, axis=-1), [_rand(rng, (r, c))])
        elif op == "log_softmax":
            fd_check_all(lambda t: nm.log_softmax(t, axis=-1), [_rand(rng, (r, c))])
        elif op == "layer_norm":
            x = _rand(rng, (r, c + 1))  # >=2 features
            fd_check_all(lambda t: nm.layer_norm(t), [x])
        elif op == "concat":
            fd_check_all(lambda a, b: nm.concat([a, b], axis=0),
                         [_rand(rng, (r, c)), _rand(rng, (r + 1, c))])
        elif op == "slice":
            x = _rand(rng, (r + 1, c + 1))
            fd_check_all(lambda t: nm.slc(t, (slice(0, r), slice(1, c + 1))), [x])
        elif op == "transpose":
            fd_check_all(lambda t: nm.transpose(t), [_rand(rng, (r, c))])
        elif op == "reshape":
            fd_check_all(lambda t: nm.reshape(t, (c, r)), [_rand(rng, (r, c))])
        elif op == "reduce_sum":
            ax = int(rng.integers(0, 2))
            fd_check_all(lambda t: nm.reduce_sum(t, axis=ax), [_rand(rng, (r, c))])
        elif op == "reduce_mean":
            ax = int(rng.integers(0, 2))
            fd_check_all(lambda t: nm.reduce_mean(t, axis=ax), [_rand(rng, (r, c))])
        elif op == "sq_norm":
            fd_check_all(nm.sq_norm, [_rand(rng, (r, c))])
        elif op == "conv1d":
            k = int(rng.choice([1, 3]))
            co = int(rng.integers(1, 4))
            fd_check_all(nm.conv1d,
                         [_rand(rng, (r + 2, c)), _rand(rng, (k, c, co)), _rand(rng, (co,))])
        elif op == "max_pool":
            # enforce in-window separation so FD never crosses an argmax tie
            T = r + 3
            x = _rand(rng, (T, c))
            x += np.arange(T)[:, None] * np.arange(1, c + 1) * 1e-2
            for i in range(0, T, 2):
                win = x[i:i + 2]
                if win.shape[0] == 2:
                    close = np.abs(win[0] - win[1]) < 1e-3
                    win[1, close] += 0.1
            fd_check_all(lambda t: nm.max_pool_time(t, 2, 2), [x])
        elif op == "pool_to":
            T = r + 4
            fd_check_all(lambda t: nm.pool_time_to(t, 3), [_rand(rng, (T, c))])
        elif op == "embedding":
            ids = rng.integers(0, r + 1, size=5)
            fd_check_all(lambda t: nm.embedding(t, ids), [_rand(rng, (r + 1, c))])
        elif op == "gather":
            rows = rng.integers(0, r, size=4)
            cols = rng.integers(0, c, size=4)
            fd_check_all(lambda t: nm.gather(t, (rows, cols)), [_rand(rng, (r, c))])
        else:
            raise AssertionError(op)


# ---------------------------------------------------------------------------
# invariants


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 8)))) * 10
        out = nm.softmax(constant(x), axis=-1).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-9)


def test_layer_norm_zero_mean_unit_variance():
    rng = np.random.default_rng(8)
    for _ in range(50):
        x = rng.normal(size=(4, int(rng.integers(8, 64)))) * rng.uniform(0.5, 5)
        out = nm.layer_norm(constant(x)).data
        assert np.max(np.abs(out.mean(axis=-1))) < 1e-6
        assert np.max(np.abs(out.var(axis=-1) - 1.0)) < 1e-4


def test_determinism_bit_identical():
    def run():
        ps = ParamStore(seed=123, dtype=np.float64)
        w = ps.matrix("w", 6, 4)
        b = ps.zeros("b", (4,))
        x = constant(np.linspace(-1, 1, 18).reshape(3, 6))
        out = nm.reduce_sum(nm.tanh(nm.add(nm.matmul(x, w), b)))
        backward(out)
        return out.data.copy(), w.grad.copy()

    (o1, g1), (o2, g2) = run(), run()
    assert o1.tobytes() == o2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_constant_subgraphs_fold_away():
    out = nm.mul(constant(2.0), constant(3.0))
    assert not out.requires and out._parents == ()


def test_embedding_rejects_out_of_range():
    table = constant(np.zeros((4, 2)))
    with pytest.raises(DomainError):
        nm.embedding(table, np.array([0, 4]))


# ---------------------------------------------------------------------------
# grad_check harness


def test_grad_check_quadratic_is_exact():
    ps = ParamStore(seed=0, dtype=np.float64)
    w = ps.matrix("w", 3, 3)

    def f():
        return nm.reduce_sum(nm.square(w))

    report = grad_check(f, ps)
    assert report.max_rel_err < 1e-9
    assert report.checked == 9


def test_grad_check_constant_function_all_zero():
    ps = ParamStore(seed=0, dtype=np.float64)
    ps.matrix("w", 2, 2)

    def f():
        return constant(1.5)

    report = grad_check(f, ps)
    assert report.max_rel_err == 0.0


def test_grad_check_reports_worst_coordinate_name():
    ps = ParamStore(seed=4, dtype=np.float64)
    w = ps.matrix("layer.w", 2, 3)

    def f():
        return nm.reduce_sum(nm.sin(w))

    report = grad_check(f, ps)
    assert report.worst.startswith("layer.w[")
    assert report.max_rel_err < 1e-6


def test_param_store_duplicate_name_rejected():
    ps = ParamStore(seed=0)
    ps.zeros("a", (2,))
    with pytest.raises(ValueError):
        ps.zeros("a", (2,))


def test_param_store_init_is_seeded_and_bounded():
    ps1 = ParamStore(seed=9, dtype=np.float32)
    ps2 = ParamStore(seed=9, dtype=np.float32)
    w1 = ps1.matrix("w", 10, 20)
    w2 = ps2.matrix("w", 10, 20)
    assert w1.data.tobytes() == w2.data.tobytes()
    bound = math.sqrt(6.0 / 30)
    assert np.all(np.abs(w1.data) <= bound)
