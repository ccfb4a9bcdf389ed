"""Finite-difference verification of tape gradients.

The whole suite runs in float64; checking in float32 is meaningless at
eps=1e-5 and is rejected. Functions under check must be pure and
deterministic: anything stochastic (dropout masks, latent noise) has to
be frozen by the caller before checking.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor


# Step ladder for deep compositions. No single step serves every
# coordinate: cancellation noise ~1e-16/(2*eps) dominates near-zero
# gradients at small steps, while truncation ~f'''*eps^2/6 dominates
# high-curvature coordinates at large ones. A coordinate passes if any
# step in the ladder agrees, which is how the two regimes are told apart
# from genuine gradient bugs (those agree at no step).
MODEL_EPS = (1e-3, 1e-4, 1e-5)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float | Sequence[float] = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8) per
    coordinate; with several step sizes each coordinate keeps its best
    agreement. ``f`` rebuilds the scalar loss from the current parameter
    values on every call and must be pure.
    """
    if T.get_default_dtype() is not np.float64:
        raise RuntimeError("grad_check requires the engine in float64 mode")
    steps = (eps,) if isinstance(eps, float) else tuple(eps)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
        tape.backward(loss)

    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            best = np.inf
            for h in steps:
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * h)
                denom = max(abs(numeric), abs(aflat[i]), 1e-8)
                best = min(best, abs(numeric - aflat[i]) / denom)
            worst = max(worst, best)
    return worst


def _p(rng, *shape) -> Tensor:
    t = Tensor(rng.uniform(-0.9, 0.9, size=shape), requires_grad=True)
    return t


def op_checks(seed: int = 0) -> list[tuple[str, float]]:
    """Run every registered op through grad_check on small random shapes."""
    rng = np.random.default_rng(seed)
    results = []

    def run(name, params, build):
        results.append((name, grad_check(lambda: build(), params)))

    a = _p(rng, 3, 4)
    b = _p(rng, 4, 2)
    run("matmul_2d", [a, b], lambda: T.mean_all(T.matmul(a, b)))

    m = _p(rng, 5, 3)
    v = _p(rng, 3)
    run("matmul_matvec", [m, v], lambda: T.mean_all(T.matmul(m, v)))

    v2 = _p(rng, 5)
    run("matmul_vecmat", [v2, m], lambda: T.mean_all(T.matmul(v2, m)))

    s1 = _p(rng, 4)
    s2 = _p(rng, 4)
    run("matmul_dot", [s1, s2], lambda: T.matmul(s1, s2))

    ba = _p(rng, 2, 3, 4)
    bw = _p(rng, 4, 2)
    run("matmul_batched_shared", [ba, bw], lambda: T.mean_all(T.matmul(ba, bw)))

    bb = _p(rng, 2, 4, 3)
    run("matmul_batched_pair", [ba, bb], lambda: T.mean_all(T.matmul(ba, bb)))

    ones = T.constant(np.ones((3, 1)))
    h = _p(rng, 2, 1, 4)
    run("matmul_ones_outer", [h], lambda: T.mean_all(T.matmul(ones, h)))

    x = _p(rng, 3, 4)
    y = _p(rng, 3, 4)
    row = _p(rng, 4)
    run("add", [x, y], lambda: T.mean_all(T.add(x, y)))
    run("add_row_broadcast", [x, row], lambda: T.mean_all(T.add(x, row)))
    run("sub", [x, y], lambda: T.mean_all(T.sub(x, y)))
    run("mul", [x, y], lambda: T.mean_all(T.mul(x, y)))
    run("mul_row_broadcast", [x, row], lambda: T.mean_all(T.mul(x, row)))
    run("scale", [x], lambda: T.mean_all(T.scale(x, -2.5)))
    run("tanh", [x], lambda: T.mean_all(T.tanh(x)))
    run("sigmoid", [x], lambda: T.mean_all(T.sigmoid(x)))
    run("log_sigmoid_chain", [x], lambda: T.mean_all(T.log(T.sigmoid(x))))
    run("exp", [x], lambda: T.mean_all(T.exp(x)))

    # keep abs and clamp away from their kinks
    xa = Tensor(rng.uniform(0.2, 0.9, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4)),
                requires_grad=True)
    run("abs", [xa], lambda: T.mean_all(T.absval(xa)))
    run("clamp_interior", [x], lambda: T.mean_all(T.clamp(x, -5.0, 5.0)))

    run("softmax_rows", [x], lambda: T.mean_all(T.mul(T.softmax_rows(x), row)))
    run("log_softmax_rows", [x], lambda: T.mean_all(T.mul(T.log_softmax_rows(x), row)))

    def fixed_dropout():
        r = np.random.default_rng(7)
        return T.mean_all(T.dropout(x, 0.4, r, training=True))

    run("dropout_fixed_mask", [x], fixed_dropout)

    c1 = _p(rng, 2, 3)
    c2 = _p(rng, 2, 5)
    crow = _const_row(rng, 8)
    run("concat_axis1", [c1, c2],
        lambda: T.mean_all(T.mul(T.concat([c1, c2], axis=1), crow)))
    run("slice_axis", [x], lambda: T.mean_all(T.slice_axis(x, 1, 1, 3)))

    table = _p(rng, 6, 3)
    ids = np.array([0, 2, 2, 5])
    run("lookup", [table], lambda: T.mean_all(T.lookup(table, ids)))

    pc = _p(rng, 4, 5)
    cols = np.array([1, 0, 4, 2])
    run("pick_columns", [pc], lambda: T.mean_all(T.pick_columns(pc, cols)))

    run("mean_all", [x], lambda: T.mean_all(x))
    run("sum_all", [x], lambda: T.sum_axis(x))
    run("sum_axis0", [x], lambda: T.mean_all(T.sum_axis(x, axis=0)))
    run("sum_axis1", [x], lambda: T.mean_all(T.sum_axis(x, axis=1)))
    ct = _const(rng, 4, 3)
    run("transpose", [x], lambda: T.mean_all(T.mul(T.transpose_last2(x), ct)))
    cr = _const(rng, 2, 6)
    run("reshape", [x], lambda: T.mean_all(T.mul(T.reshape(x, (2, 6)), cr)))
    return results


def _const(rng, *shape):
    return T.constant(rng.uniform(-1, 1, size=shape))


def _const_row(rng, n):
    return T.constant(rng.uniform(-1, 1, size=(n,)))


def model_checks(seed: int = 0, k: int = 4) -> list[tuple[str, float]]:
    """Gradient-check full model losses on toy shapes (k=4, 2-3 tokens)."""
    from . import suitecases

    return suitecases.build_model_checks(seed=seed, k=k)


def run_suite(seed: int = 0, tol: float = 1e-4, verbose: bool = True) -> bool:
    """Full finite-difference suite; returns True when everything passes."""
    ok = True
    with T.using_dtype(np.float64):
        for name, err in op_checks(seed) + model_checks(seed):
            passed = err < tol
            ok = ok and passed
            if verbose:
                print(f"{'PASS' if passed else 'FAIL'}  {name:28s} max_rel_err={err:.3e}")
    return ok
