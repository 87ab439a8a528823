import itertools
import math

import numpy as np
import pytest

from sdpolymer.field import FieldRegion, sample_field
from sdpolymer.model import DisorderSpec, DomainError, ModelParams
from sdpolymer.slab import (
    ConvergenceError,
    DegenerateInputError,
    SlabSystem,
    endpoint_measure,
    measure_from_weights,
    refine_window,
    solve_backward,
    solve_forward,
    solve_free_partition,
    sweep_levels,
)

SPEC = DisorderSpec.bernoulli(0.5, 1.0)


def dense_value(params, field, L, W, depth=None):
    """Independent oracle: assemble the linear system on the window and solve it densely."""
    d = params.d
    lo = 0 if depth is None else -depth
    perp = list(itertools.product(range(-W, W + 1), repeat=d - 1))
    sites = [(h,) + t for h in range(lo, L) for t in perp]
    idx = {s: i for i, s in enumerate(sites)}
    n = len(sites)
    A = np.eye(n)
    b = np.zeros(n)
    steps = []
    for j in range(d):
        for s in (1, -1):
            e = [0] * d
            e[j] = s
            steps.append(tuple(e))
    w = lambda x: math.exp(-(params.lam + params.beta * field[x]))
    for x in sites:
        i = idx[x]
        for e in steps:
            y = tuple(a + c for a, c in zip(x, e))
            if any(abs(t) > W for t in y[1:]) or y[0] < lo:
                continue
            if depth is None:  # start convention
                c = w(x) / (2 * d)
            else:  # end convention
                c = w(y) / (2 * d)
            if y[0] == L:
                b[i] += c
            else:
                A[i, idx[y]] -= c
    return float(np.linalg.solve(A, b)[idx[(0,) * d]])


@pytest.mark.parametrize("d,L,W,beta", [(1, 1, 1, 0.5), (1, 5, 1, 1.0), (2, 3, 2, 0.5), (2, 6, 3, 2.0), (3, 3, 2, 1.0)])
def test_bridge_matches_dense_solve(d, L, W, beta):
    p = ModelParams.for_spec(d, 0.5, beta, SPEC)
    f = sample_field(SPEC, FieldRegion(d, 0, L, W), 5, 1)
    ref = dense_value(p, f, L, W)
    for method in ("jacobi", "gauss_seidel"):
        res = solve_backward(SlabSystem(p, f, L, radius=W, tol=1e-13, method=method))
        assert res.total == pytest.approx(ref, rel=1e-10)
        assert res.tilted_bridge == pytest.approx(math.exp(p.kappa * L) * ref, rel=1e-10)
    fw = solve_forward(SlabSystem(p, f, L, radius=W, tol=1e-13))
    assert fw.total == pytest.approx(ref, rel=1e-10)
    assert math.fsum(np.ravel(fw.endpoint_values)) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("d,L,W,D", [(1, 3, 1, 2), (2, 2, 2, 3)])
def test_free_partition_matches_dense_solve(d, L, W, D):
    p = ModelParams.for_spec(d, 0.7, 1.0, SPEC)
    f = sample_field(SPEC, FieldRegion(d, -D, L, W), 8)
    ref = dense_value(p, f, L, W, depth=D)
    res = solve_free_partition(SlabSystem(p, f, L, radius=W, depth=D, tol=1e-13))
    assert res.total == pytest.approx(ref, rel=1e-10)
    with pytest.raises(DomainError):
        solve_free_partition(SlabSystem(p, f, L, radius=W))


def test_beta_zero_d1_bridge_closed_form():
    # gambler's ruin with killing: U(x) = A r1^x + B r2^x on 0..L-1 with U(L) = 1, U(-1) = 0
    lam, L = 0.5, 7
    p = ModelParams(1, lam, 0.0)
    f = sample_field(SPEC, FieldRegion(1, 0, L, 1), 0)
    q = math.exp(-lam) / 2
    r1 = (1 + math.sqrt(1 - 4 * q * q)) / (2 * q)
    r2 = 1 / r1
    # U(x) = q (U(x+1) + U(x-1)), U(-1) = 0 and U(L) = 1
    A = 1 / (r1 ** (L + 1) - r2 ** (L + 1))
    u0 = A * (r1 - r2)
    assert solve_backward(SlabSystem(p, f, L, tol=1e-14)).total == pytest.approx(u0, rel=1e-11)


def test_sweep_matches_individual_solves():
    p = ModelParams.for_spec(2, 0.5, 1.0, SPEC)
    W, Lmax = 4, 8
    f = sample_field(SPEC, FieldRegion(2, 0, Lmax, W), 3, 2)
    sw = sweep_levels(p, f, Lmax, radius=W)
    for L in (1, 4, 8):
        one = solve_forward(SlabSystem(p, f, L, radius=W, tol=1e-13))
        assert math.exp(sw.log_totals[L - 1]) == pytest.approx(one.total, rel=1e-10)
        mu = endpoint_measure(one).probabilities
        assert np.allclose(sw.endpoints[L - 1], mu, atol=1e-10)
        assert sw.result(L).tilted_bridge == pytest.approx(one.tilted_bridge, rel=1e-10)


def test_flux_bound_and_window_refinement():
    p = ModelParams.for_spec(2, 0.5, 0.5, SPEC)
    f = sample_field(SPEC, FieldRegion(2, 0, 6, 32), 4)
    small = solve_backward(SlabSystem(p, f, 6, radius=2, tol=1e-12))
    big = solve_backward(SlabSystem(p, f, 6, radius=32, tol=1e-12))
    assert small.total <= big.total
    assert big.total - small.total <= small.truncation_flux + 1e-15
    res, sys = refine_window(SlabSystem(p, f, 6, radius=2, tol=1e-9))
    assert res.total == pytest.approx(big.total, rel=1e-8)
    assert sys.radius >= 4


def test_monotone_in_beta_and_lambda():
    f = sample_field(SPEC, FieldRegion(2, 0, 5, 3), 9)
    vals = [solve_backward(SlabSystem(ModelParams.for_spec(2, lam, beta, SPEC), f, 5, radius=3)).total
            for lam, beta in ((0.5, 0.0), (0.5, 1.0), (1.0, 1.0))]
    assert vals[0] > vals[1] > vals[2]


def test_endpoint_measure_statistics():
    m = measure_from_weights(np.array([1.0, 1.0, 2.0]))
    assert m.max_atom == 0.5
    assert m.participation_ratio == pytest.approx(0.375)
    assert m.entropy == pytest.approx(-(2 * 0.25 * math.log(0.25) + 0.5 * math.log(0.5)))
    p = ModelParams.for_spec(1, 0.5, 1.0, SPEC)
    f = sample_field(SPEC, FieldRegion(1, 0, 4, 1), 0)
    assert endpoint_measure(solve_forward(SlabSystem(p, f, 4))).max_atom == 1.0
    with pytest.raises(DegenerateInputError):
        endpoint_measure(solve_backward(SlabSystem(p, f, 4)))


def test_errors():
    p = ModelParams.for_spec(2, 0.5, 1.0, SPEC)
    f = sample_field(SPEC, FieldRegion(2, 0, 4, 2), 0)
    with pytest.raises(DomainError):
        SlabSystem(p, f, 5, radius=2)
    with pytest.raises(DomainError):
        SlabSystem(p, f, 4, radius=3)
    with pytest.raises(ConvergenceError):
        solve_backward(SlabSystem(p, f, 4, radius=2, tol=1e-15, max_iter=2))
    assert solve_backward(SlabSystem(p, f, 0, radius=2)).total == 1.0
