"""Finite-difference audits: per-op sweeps and the full-objective check.

Used by the command-line ``gradcheck`` entry point and the acceptance suite.
All audits run in float64; the per-op gate is 1e-6 relative error over every
coordinate, the end-to-end composite gate is 1e-3 on at least 95% of sampled
coordinates (discrete peak selection inside the periodicity term may flip
under perturbation on a few coordinates, which the margin absorbs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .data import BOS, EOS
from .model import micro_model
from .numerics import ParamStore, Tensor, backward, constant, grad_check, rel_err

OP_GATE = 1e-6
COMPOSITE_GATE = 1e-3
COMPOSITE_MIN_FRACTION = 0.95


@dataclass
class OpAudit:
    name: str
    cases: int
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < OP_GATE


def _fd_max_err(build, inputs, step=1e-5) -> float:
    """Worst relative error across every coordinate of every input."""
    ts = [Tensor(np.asarray(x, dtype=np.float64), requires=True) for x in inputs]
    out = build(*ts)
    w = np.arange(1, out.data.size + 1, dtype=np.float64).reshape(out.data.shape)
    w /= out.data.size

    def scalar():
        return nm.reduce_sum(nm.mul(build(*ts), constant(w)))

    loss = scalar()
    backward(loss)
    worst = 0.0
    for t in ts:
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for c in range(flat.size):
            orig = flat[c]
            flat[c] = orig + step
            hi = float(scalar().data)
            flat[c] = orig - step
            lo = float(scalar().data)
            flat[c] = orig
            worst = max(worst, rel_err(float(grad.reshape(-1)[c]),
                                       (hi - lo) / (2 * step)))
    return worst


def op_gradient_suite(cases_per_op: int = 100, seed: int = 0) -> list[OpAudit]:
    """Finite-difference sweep over every registered forward op."""
    results = []

    def check(name, fn):
        rng = np.random.default_rng((seed, abs(hash(name)) % (2 ** 31)))
        worst = 0.0
        for _ in range(cases_per_op):
            r = int(rng.integers(1, 5))
            c = int(rng.integers(1, 5))
            worst = max(worst, fn(rng, r, c))
        results.append(OpAudit(name, cases_per_op, worst))

    def u(rng, shape, lo=-2.0, hi=2.0):
        return rng.uniform(lo, hi, size=shape)

    check("add", lambda g, r, c: _fd_max_err(nm.add, [u(g, (r, c)), u(g, (r, c))]))
    check("sub", lambda g, r, c: _fd_max_err(nm.sub, [u(g, (r, c)), u(g, (r, c))]))
    check("mul", lambda g, r, c: _fd_max_err(nm.mul, [u(g, (r, c)), u(g, (r, c))]))
    check("div", lambda g, r, c: _fd_max_err(
        nm.div, [u(g, (r, c)), u(g, (r, c), 0.5, 2.0) * g.choice([-1.0, 1.0], size=(r, c))]))
    check("matmul", lambda g, r, c: _fd_max_err(
        nm.matmul, [u(g, (r, 3)), u(g, (3, c))]))
    check("sin", lambda g, r, c: _fd_max_err(nm.sin, [u(g, (r, c))]))
    check("cos", lambda g, r, c: _fd_max_err(nm.cos, [u(g, (r, c))]))
    check("exp", lambda g, r, c: _fd_max_err(nm.exp, [u(g, (r, c))]))
    check("log", lambda g, r, c: _fd_max_err(nm.log, [u(g, (r, c), 0.2, 3.0)]))
    check("sqrt", lambda g, r, c: _fd_max_err(nm.sqrt, [u(g, (r, c), 0.2, 3.0)]))
    check("sigmoid", lambda g, r, c: _fd_max_err(nm.sigmoid, [u(g, (r, c))]))
    check("tanh", lambda g, r, c: _fd_max_err(nm.tanh, [u(g, (r, c))]))
    check("abs", lambda g, r, c: _fd_max_err(
        nm.absolute, [np.where(np.abs(x := u(g, (r, c))) < 1e-3, x + 0.5, x)]))
    check("square", lambda g, r, c: _fd_max_err(nm.square, [u(g, (r, c))]))
    check("gelu", lambda g, r, c: _fd_max_err(nm.gelu, [u(g, (r, c))]))
    check("softmax", lambda g, r, c: _fd_max_err(
        lambda t: nm.softmax(t, axis=-1), [u(g, (r, c))]))
    check("log_softmax", lambda g, r, c: _fd_max_err(
        lambda t: nm.log_softmax(t, axis=-1), [u(g, (r, c))]))
    check("layer_norm", lambda g, r, c: _fd_max_err(nm.layer_norm, [u(g, (r, c + 1))]))
    check("concat", lambda g, r, c: _fd_max_err(
        lambda a, b: nm.concat([a, b], axis=0), [u(g, (r, c)), u(g, (r + 1, c))]))
    check("slice", lambda g, r, c: _fd_max_err(
        lambda t: nm.slc(t, (slice(0, r), slice(0, c))), [u(g, (r + 1, c + 1))]))
    def gather_case(g, r, c):
        key = (g.integers(0, r, size=4), g.integers(0, c, size=4))
        return _fd_max_err(lambda t: nm.gather(t, key), [u(g, (r, c))])

    check("gather", gather_case)
    check("transpose", lambda g, r, c: _fd_max_err(nm.transpose, [u(g, (r, c))]))
    check("reshape", lambda g, r, c: _fd_max_err(
        lambda t: nm.reshape(t, (c, r)), [u(g, (r, c))]))

    def reduce_case(op):
        def run(g, r, c):
            ax = int(g.integers(0, 2))
            return _fd_max_err(lambda t: op(t, axis=ax), [u(g, (r, c))])
        return run

    check("reduce_sum", reduce_case(nm.reduce_sum))
    check("reduce_mean", reduce_case(nm.reduce_mean))
    check("sq_norm", lambda g, r, c: _fd_max_err(nm.sq_norm, [u(g, (r, c))]))

    def embedding_case(g, r, c):
        ids = g.integers(0, r + 1, size=5)
        return _fd_max_err(lambda t: nm.embedding(t, ids), [u(g, (r + 1, c))])

    check("embedding", embedding_case)
    check("conv1d", lambda g, r, c: _fd_max_err(
        nm.conv1d, [u(g, (r + 2, c)), u(g, (3, c, 2)), u(g, (2,))]))
    check("max_pool", lambda g, r, c: _fd_max_err(
        lambda t: nm.max_pool_time(t, 2, 2), [_separated(g, r + 3, c)]))
    check("pool_to", lambda g, r, c: _fd_max_err(
        lambda t: nm.pool_time_to(t, 3), [u(g, (r + 4, c))]))
    return results


def _separated(rng, t, c):
    """Random (t, c) input whose pooling windows have no near-ties."""
    x = rng.uniform(-2, 2, size=(t, c))
    for i in range(0, t, 2):
        win = x[i:i + 2]
        if win.shape[0] == 2:
            close = np.abs(win[0] - win[1]) < 1e-3
            win[1, close] += 0.1
    return x


def composite_gradcheck(samples_per_param: int = 2, seed: int = 0):
    """Full composite objective on the micro model vs finite differences."""
    from .training import TrainConfig, composite_loss

    model, sample = micro_model(seed=seed, precision="float64")
    cfg = TrainConfig(seed=seed)
    ref = [BOS, 4, 7, 5, 9, EOS]

    def f():
        total, _ = composite_loss(model, [(sample, ref)], cfg)
        return total

    return grad_check(f, model.params, samples=samples_per_param, step=1e-5,
                      gate=COMPOSITE_GATE, seed=seed)


def quadratic_gradcheck():
    """Sanity anchor: exact up to rounding for quadratics."""
    ps = ParamStore(seed=0, dtype=np.float64)
    w = ps.matrix("w", 4, 4)

    def f():
        return nm.reduce_sum(nm.square(w))

    return grad_check(f, ps)


def constant_gradcheck():
    """A constant objective must report exactly zero gradients."""
    ps = ParamStore(seed=0, dtype=np.float64)
    ps.matrix("w", 3, 3)

    def f():
        return constant(2.0)

    return grad_check(f, ps)


def periodicity_loss_gradcheck(seed: int = 0):
    """Dedicated check for the peak-interval loss (skipped in the micro
    composite, whose sequences are too short to carry peaks)."""
    from .encoder import FeatureSeq, periodicity_loss

    rng = np.random.default_rng(seed)
    frames = 24
    base = np.zeros(frames)
    base[::6] = 1.0
    feats = base[:, None] + 0.05 * rng.normal(size=(frames, 4))
    holder = ParamStore(seed=seed, dtype=np.float64)
    x = holder._register("features", feats)

    def f():
        return periodicity_loss(FeatureSeq(x, "periodic"), temperature=0.5)

    return grad_check(f, holder, step=1e-6, gate=COMPOSITE_GATE, seed=seed)


def run_full_audit(cases_per_op: int = 100, verbose_print=print) -> bool:
    """Everything the ``gradcheck`` command runs; returns overall pass."""
    ok = True
    for audit in op_gradient_suite(cases_per_op):
        status = "pass" if audit.ok else "FAIL"
        verbose_print(f"[{status}] op {audit.name:<12} max rel err {audit.max_rel_err:.3e} "
                      f"({audit.cases} cases, gate {OP_GATE:g})")
        ok &= audit.ok
    q = quadratic_gradcheck()
    verbose_print(f"[{'pass' if q.max_rel_err < 1e-9 else 'FAIL'}] quadratic exactness "
                  f"max rel err {q.max_rel_err:.3e} (gate 1e-9)")
    ok &= q.max_rel_err < 1e-9
    z = constant_gradcheck()
    verbose_print(f"[{'pass' if z.max_rel_err == 0 else 'FAIL'}] constant objective "
                  f"max rel err {z.max_rel_err:.3e} (exactly 0)")
    ok &= z.max_rel_err == 0.0
    p = periodicity_loss_gradcheck()
    p_ok = p.passes(COMPOSITE_GATE, COMPOSITE_MIN_FRACTION)
    verbose_print(f"[{'pass' if p_ok else 'FAIL'}] periodicity loss "
                  f"max rel err {p.max_rel_err:.3e}, "
                  f"{p.passed_fraction:.1%} under {COMPOSITE_GATE:g}")
    ok &= p_ok
    comp = composite_gradcheck()
    c_ok = comp.passes(COMPOSITE_GATE, COMPOSITE_MIN_FRACTION)
    verbose_print(f"[{'pass' if c_ok else 'FAIL'}] micro composite objective "
                  f"max rel err {comp.max_rel_err:.3e}, "
                  f"{comp.passed_fraction:.1%} of {comp.checked} coords under "
                  f"{COMPOSITE_GATE:g} (need {COMPOSITE_MIN_FRACTION:.0%})")
    ok &= c_ok
    return bool(ok)
