"""Quenched bridge and partition values on absorbing slabs.

All solves run in the untilted gauge: a path of N steps carries the simple
random walk probability (2d)^-N times a product of site weights
``w(x) = exp(-(lam + beta*omega(x)))``. The tilted bridge value follows from
the untilted one by a factor ``exp(kappa * L)``.

Two weight conventions exist for a path X_0..X_N with X_N on the target
hyperplane: ``"start"`` weighs X_0..X_{N-1} (bridge quantities) and ``"end"``
weighs X_1..X_N (the free point-to-hyperplane partition function).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .field import DisorderField, FieldRegion
from .model import DomainError, ModelParams, solve_kappa

Convention = Literal["start", "end"]


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed to converge; with lam > 0 this signals a bug."""


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class SlabSystem:
    """Geometry and inputs of one absorbing-boundary solve.

    ``depth`` is None for a bridge (levels below 0 are forbidden); otherwise it
    is the lower truncation depth D of a free partition function, paths below
    level -D being dropped. ``radius`` is the transverse truncation W.
    """

    params: ModelParams
    field: DisorderField
    L: int
    radius: int = 1
    depth: Optional[int] = None
    convention: Optional[Convention] = None
    tol: float = 1e-10
    method: Literal["jacobi", "gauss_seidel"] = "jacobi"
    track_flux: bool = True
    max_iter: Optional[int] = None

    def __post_init__(self) -> None:
        if self.L < 0:
            raise DomainError("target level must be nonnegative")
        if self.field.region.d != self.params.d:
            raise DomainError("field dimension does not match the model")
        if self.depth is not None and self.depth < 0:
            raise DomainError("depth must be nonnegative")
        if self.convention is None:
            object.__setattr__(self, "convention", "start" if self.bridge else "end")
        if self.L > 0 and not self.field.region.covers(self.required_region()):
            raise DomainError(f"field {self.field.region} does not cover {self.required_region()}")

    @property
    def bridge(self) -> bool:
        return self.depth is None

    @property
    def lowest_level(self) -> int:
        return 0 if self.depth is None else -self.depth

    def required_region(self) -> FieldRegion:
        return FieldRegion(self.params.d, self.lowest_level, max(self.L, 0), self.radius)


@dataclass
class SolveResult:
    total: float
    tilted_bridge: float
    endpoint_values: Optional[np.ndarray]
    iterations: int
    residual: float
    truncation_flux: float
    log_total: float
    radius: int = 0
    update_norms: list[float] = field(default_factory=list, repr=False)

    def endpoint_sites(self) -> list[tuple[int, ...]]:
        """Transverse coordinates matching the flattened ``endpoint_values``."""
        if self.endpoint_values is None:
            return []
        k = self.endpoint_values.ndim
        W = self.radius
        grids = np.meshgrid(*([np.arange(-W, W + 1)] * k), indexing="ij")
        return [tuple(int(g) for g in pt) for pt in zip(*(g.ravel() for g in grids))] if k else [()]


@dataclass(frozen=True)
class EndpointMeasure:
    probabilities: np.ndarray
    max_atom: float
    participation_ratio: float
    entropy: float


def _neighbor_sum(a: np.ndarray) -> np.ndarray:
    """Sum over the 2d lattice neighbours with zero outside the array."""
    out = np.zeros_like(a)
    for ax in range(a.ndim):
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        out[tuple(lo)] += a[tuple(hi)]
        out[tuple(hi)] += a[tuple(lo)]
    return out


# the same stencil applied to a single level gives the transverse sum
_level_neighbor_sum = _neighbor_sum


class _Slab:
    def __init__(self, system: SlabSystem):
        self.s = system
        p = system.params
        self.d = p.d
        self.q = math.exp(-p.lam)
        self.lo = system.lowest_level
        slab = FieldRegion(p.d, self.lo, system.L - 1, system.radius)
        top = FieldRegion(p.d, system.L, system.L, system.radius)
        self.w = np.exp(-(p.lam + p.beta * system.field.window(slab)))
        self.w_top = np.exp(-(p.lam + p.beta * system.field.window(top)))[0]
        self.origin = (0 - self.lo,) + (system.radius,) * (p.d - 1)
        self.inv2d = 1.0 / (2 * p.d)
        self.shape = self.w.shape
        n_lev = self.shape[0]
        margin = 20 * (n_lev + (p.d - 1) * (2 * system.radius + 1)) + 200
        self.max_iter = system.max_iter or int(math.ceil(math.log(system.tol) / math.log(self.q))) + margin

    # one sweep of each map, Jacobi form
    def _backward_map(self, U: np.ndarray) -> np.ndarray:
        inv = self.inv2d
        if self.s.convention == "start":
            S = _neighbor_sum(U)
            S[-1] += 1.0
            return self.w * S * inv
        S = _neighbor_sum(self.w * U)
        S[-1] += self.w_top
        return S * inv

    def _forward_map(self, g: np.ndarray) -> np.ndarray:
        inv = self.inv2d
        if self.s.convention == "start":
            out = _neighbor_sum(self.w * g) * inv
        else:
            out = self.w * _neighbor_sum(g) * inv
        out[self.origin] += 1.0
        return out

    def _gs_sweep(self, U: np.ndarray, forward: bool) -> np.ndarray:
        """In-place level-ordered Gauss-Seidel sweep; returns U."""
        inv = self.inv2d
        start = self.s.convention == "start"
        n = U.shape[0]
        for h in range(n):
            below = U[h - 1] if h > 0 else 0.0
            above = U[h + 1] if h + 1 < n else 0.0
            if not forward:
                if start:
                    S = _level_neighbor_sum(U[h]) + below + above
                    if h == n - 1:
                        S = S + 1.0
                    U[h] = self.w[h] * S * inv
                else:
                    wb = self.w[h - 1] * below if h > 0 else 0.0
                    wa = self.w[h + 1] * above if h + 1 < n else 0.0
                    S = _level_neighbor_sum(self.w[h] * U[h]) + wb + wa
                    if h == n - 1:
                        S = S + self.w_top
                    U[h] = S * inv
            else:
                if start:
                    wb = self.w[h - 1] * below if h > 0 else 0.0
                    wa = self.w[h + 1] * above if h + 1 < n else 0.0
                    new = (_level_neighbor_sum(self.w[h] * U[h]) + wb + wa) * inv
                else:
                    new = self.w[h] * (_level_neighbor_sum(U[h]) + below + above) * inv
                if h == self.origin[0]:
                    new = np.array(new, copy=True)
                    new[self.origin[1:]] += 1.0
                U[h] = new
        return U

    def iterate(self, forward: bool) -> tuple[np.ndarray, int, float, list[float]]:
        X = np.zeros(self.shape)
        norms: list[float] = []
        tol = self.s.tol
        for it in range(1, self.max_iter + 1):
            if self.s.method == "jacobi":
                new = self._forward_map(X) if forward else self._backward_map(X)
            else:
                new = self._gs_sweep(X.copy(), forward)
            delta = np.abs(new - X)
            norms.append(float(delta.max()))
            rel = float((delta / np.maximum(new, 1e-300)).max())
            X = new
            if rel < tol and norms[-1] < tol:
                return X, it, rel, norms
        raise ConvergenceError(
            f"no convergence after {self.max_iter} sweeps (relative update {rel:.3e}); "
            "the contraction bound guarantees convergence, so the iteration map is wrong"
        )

    def endpoint_from_density(self, g: np.ndarray) -> np.ndarray:
        if self.s.convention == "start":
            return self.w[-1] * g[-1] * self.inv2d
        return self.w_top * g[-1] * self.inv2d

    def flux_bound(self, g: np.ndarray) -> float:
        """Upper bound on the value carried by paths leaving the window.

        Each first exit to an outside site y' is charged the prefix weight times
        E_{y'}[exp(-lam * T_L)] = rho^(L - level(y')), with rho = exp(-kappa(lam, beta=0)),
        which dominates every continuation since omega >= 0.
        """
        p = self.s.params
        rho = math.exp(-solve_kappa(p.d, p.lam))
        L = self.s.L
        pre = g * self.w * self.inv2d if self.s.convention == "start" else g * self.inv2d
        levels = np.arange(self.lo, L)
        total = 0.0
        for ax in range(1, self.d):
            for idx in (0, -1):
                sl = [slice(None)] * self.d
                sl[ax] = idx
                face = pre[tuple(sl)]
                lv = levels.reshape((-1,) + (1,) * (face.ndim - 1))
                total += float((face * rho ** (L - lv)).sum())
        if self.s.depth is not None:
            total += float(pre[0].sum()) * rho ** (L - self.lo + 1)
        return total


def _finish(system: SlabSystem, total: float, **kw) -> SolveResult:
    log_total = math.log(total) if total > 0 else -math.inf
    tilted = math.exp(system.params.kappa * system.L + log_total) if total > 0 else 0.0
    return SolveResult(total=total, tilted_bridge=tilted, log_total=log_total, radius=system.radius, **kw)


def _trivial(system: SlabSystem) -> SolveResult:
    ep = np.ones((1,) * 0) if system.params.d == 1 else None
    return _finish(system, 1.0, endpoint_values=ep, iterations=0, residual=0.0, truncation_flux=0.0)


def solve_backward(system: SlabSystem) -> SolveResult:
    """Untilted value from the origin by the backward fixed point U = w * P (U + 1_{H_L})."""
    if system.L == 0:
        return _trivial(system)
    slab = _Slab(system)
    U, it, res, norms = slab.iterate(forward=False)
    flux = 0.0
    if system.track_flux and (system.params.d > 1 or system.depth is not None):
        g, *_ = slab.iterate(forward=True)
        flux = slab.flux_bound(g)
    return _finish(system, float(U[slab.origin]), endpoint_values=None, iterations=it,
                   residual=res, truncation_flux=flux, update_norms=norms)


def solve_forward(system: SlabSystem) -> SolveResult:
    """Endpoint-resolved value by accumulating the path density from the origin."""
    if system.L == 0:
        return _trivial(system)
    slab = _Slab(system)
    g, it, res, norms = slab.iterate(forward=True)
    ep = slab.endpoint_from_density(g)
    flux = slab.flux_bound(g) if system.track_flux else 0.0
    total = math.fsum(ep.ravel())
    return _finish(system, total, endpoint_values=ep, iterations=it, residual=res,
                   truncation_flux=flux, update_norms=norms)


def solve_free_partition(system: SlabSystem) -> SolveResult:
    """Z_L(omega) = E[exp(-sum_{n=1}^{T_L} (lam + beta*omega(X_n)))] on the truncated window."""
    if system.depth is None:
        raise DomainError("free partition needs a lower truncation depth")
    return solve_backward(system)


def refine_window(system: SlabSystem, max_doublings: int = 4) -> tuple[SolveResult, SlabSystem]:
    """Solve at W, 2W, ... until consecutive totals agree to the system tolerance.

    The field must already cover the largest window tried; fields are
    site-addressed, so a bigger field agrees with a smaller one on the overlap.
    """
    res = solve_backward(system)
    for _ in range(max_doublings):
        bigger = SlabSystem(**{**system.__dict__, "radius": 2 * system.radius})
        res2 = solve_backward(bigger)
        if abs(res2.total - res.total) <= system.tol * res2.total:
            return res2, bigger
        system, res = bigger, res2
    return res, system


def endpoint_measure(result: SolveResult) -> EndpointMeasure:
    """Normalized hitting distribution on the target hyperplane and its localization statistics."""
    if result.endpoint_values is None:
        raise DegenerateInputError("result carries no endpoint resolution; use solve_forward")
    v = np.asarray(result.endpoint_values, dtype=float)
    s = math.fsum(v.ravel())
    if not s > 0:
        raise DegenerateInputError("endpoint values sum to zero")
    return measure_from_weights(v / s)


def measure_from_weights(mu: np.ndarray) -> EndpointMeasure:
    mu = np.asarray(mu, dtype=float)
    mu = mu / mu.sum()
    nz = mu[mu > 0]
    return EndpointMeasure(
        probabilities=mu,
        max_atom=float(mu.max()),
        participation_ratio=float((mu**2).sum()),
        entropy=float(-(nz * np.log(nz)).sum()),
    )


# ---------------------------------------------------------------------------
# level elimination: all targets L = 1..L_max in one upward pass


@dataclass
class LevelSweep:
    """Untilted values for every target level from one block elimination.

    ``log_totals[L-1]`` is the log of the untilted value for target L and
    ``endpoints[L-1]`` the endpoint distribution on H_L (normalized to sum 1).
    """

    params: ModelParams
    radius: int
    log_totals: np.ndarray
    endpoints: list[np.ndarray]

    def log_tilted(self) -> np.ndarray:
        L = np.arange(1, len(self.log_totals) + 1)
        return self.log_totals + self.params.kappa * L

    def result(self, L: int) -> SolveResult:
        lt = float(self.log_totals[L - 1])
        return SolveResult(
            total=math.exp(lt), tilted_bridge=math.exp(lt + self.params.kappa * L),
            endpoint_values=self.endpoints[L - 1] * math.exp(lt), iterations=0, residual=0.0,
            truncation_flux=math.nan, log_total=lt, radius=self.radius,
        )


def _transverse_adjacency(d: int, W: int) -> np.ndarray:
    n = 2 * W + 1
    k = d - 1
    size = n**k
    if k == 0:
        return np.zeros((1, 1))
    idx = np.arange(size).reshape((n,) * k)
    A = np.zeros((size, size))
    for ax in range(k):
        lo = [slice(None)] * k
        hi = [slice(None)] * k
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        a, b = idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()
        A[a, b] = 1.0
        A[b, a] = 1.0
    return A


def sweep_levels(
    params: ModelParams,
    field: DisorderField,
    L_max: int,
    radius: int = 1,
    depth: Optional[int] = None,
    convention: Optional[Convention] = None,
) -> LevelSweep:
    """Direct solve of the forward density for all targets 1..L_max.

    Block Gaussian elimination over levels from the bottom of the slab: the
    Schur complement at level h only involves levels <= h, so the top block of
    the density for the slab [bottom, h] is available before level h+1 is
    added. Rescaling per level keeps values representable.
    """
    d = params.d
    convention = convention or ("start" if depth is None else "end")
    lo = 0 if depth is None else -depth
    region = FieldRegion(d, lo, L_max, radius)
    w_all = np.exp(-(params.lam + params.beta * field.window(region))).reshape(region.n_levels, -1)
    n = w_all.shape[1]
    inv = 1.0 / (2 * d)
    Pt = _transverse_adjacency(d, radius) * inv
    I = np.eye(n)
    src = np.zeros(n)
    src[n // 2] = 1.0
    log_totals = np.empty(L_max)
    endpoints: list[np.ndarray] = []
    log_scale = 0.0
    S_inv_up = None  # S_{h-1}^{-1} M_{h-1,h}
    r_prev = None  # S_{h-1}^{-1} r_{h-1}
    shape_t = (2 * radius + 1,) * (d - 1)
    for h in range(lo, L_max):
        wh = w_all[h - lo]
        if convention == "start":
            M_hh = I - Pt * wh[None, :]
            # M_{h,h-1} = -diag(w_{h-1})/(2d); M_{h-1,h} = -diag(w_h)/(2d)
            M_down = -inv * w_all[h - lo - 1] if h > lo else None
        else:
            M_hh = I - wh[:, None] * Pt
            M_down = -inv * wh if h > lo else None
        b = src if h == 0 else np.zeros(n)
        if h > lo:
            # S_h = M_hh - M_{h,h-1} S_{h-1}^{-1} M_{h-1,h}; M_{h,h-1} is diagonal
            S = M_hh - M_down[:, None] * S_inv_up
            r = b * math.exp(-log_scale) - M_down * r_prev
        else:
            S = M_hh
            r = b.copy()
        up = (-inv * w_all[h - lo + 1]) if convention == "start" else (-inv * wh)
        sol = np.linalg.solve(S, np.column_stack([np.diag(up), r]))
        S_inv_up, g_top = sol[:, :n], sol[:, n]
        scale = float(np.abs(g_top).max())
        if scale > 0:
            g_top = g_top / scale
            log_scale += math.log(scale)
        r_prev = g_top
        if h >= 0:
            w_end = wh if convention == "start" else w_all[h - lo + 1]
            ep = w_end * g_top * inv
            tot = math.fsum(ep)
            log_totals[h] = math.log(tot) + log_scale
            endpoints.append((ep / tot).reshape(shape_t))
    return LevelSweep(params, radius, log_totals, endpoints)
