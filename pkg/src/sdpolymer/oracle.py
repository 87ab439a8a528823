"""Exact path sums on tiny instances, used as ground truth for the solvers.

Quenched sums run as a time-indexed dynamic program over positions: after n
steps the table holds the total weight of all admissible n-step prefixes
ending at each site, so the result is the exact sum over every path of length
at most ``N_max``. Annealed sums depend on the whole local-time profile and are
enumerated breadth first over (position, profile, break-candidate) states,
merging paths that share a state.

Every result carries the truncation bound ``exp(-lam (N_max+1)) / (1 - exp(-lam))``
dominating all omitted paths, plus any mass dropped by pruning.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .field import DisorderField
from .model import (
    DisorderSpec,
    DomainError,
    LocalTimeProfile,
    ModelParams,
    Site,
    annealed_weight,
    phi_uncentered,
    tilted_kernel,
    unit_steps,
)


class BudgetExceeded(RuntimeError):
    """Enumeration hit its state cap; ``partial`` is a lower bound and ``bound`` the slack."""

    def __init__(self, partial: float, bound: float, states: int):
        super().__init__(f"state budget exceeded after {states} states; partial={partial:.6g}, bound={bound:.3g}")
        self.partial = partial
        self.bound = bound
        self.states = states


@dataclass(frozen=True)
class EnumerationBudget:
    N_max: int = 40
    max_paths: int = 5_000_000
    prune_tol: float = 0.0

    def __post_init__(self) -> None:
        if self.N_max < 1:
            raise DomainError("N_max must be positive")

    def truncation_bound(self, lam: float) -> float:
        q = math.exp(-lam)
        return q ** (self.N_max + 1) / (1.0 - q)


@dataclass
class OracleValue:
    value: float
    bound: float
    states: int = 0
    endpoints: dict[Site, float] = field(default_factory=dict)
    tilted: float = math.nan
    by_duration: dict[tuple[int, Site], float] = field(default_factory=dict)

    def contains(self, x: float, slack: float = 0.0) -> bool:
        """Whether x lies in [value, value + bound] up to ``slack``."""
        return self.value - slack <= x <= self.value + self.bound + slack


# ---------------------------------------------------------------------------
# path utilities


def iter_paths(d: int, L: int, N_max: int, bridge: bool = True, lower: Optional[int] = None) -> Iterator[list[Site]]:
    """All nearest-neighbour paths from the origin first hitting level L within N_max steps.

    With ``bridge`` the path must stay at levels >= 0 before hitting L; with
    ``lower`` it must stay at levels >= lower. Exponential cost; tiny N only.
    """
    floor = 0 if bridge else lower
    steps = unit_steps(d)
    path: list[Site] = [(0,) * d]

    def rec() -> Iterator[list[Site]]:
        x = path[-1]
        n = len(path) - 1
        if x[0] == L:
            yield list(path)
            return
        if n == N_max or L - x[0] > N_max - n:
            return
        for s in steps:
            y = tuple(a + b for a, b in zip(x, s))
            if floor is not None and y[0] < floor:
                continue
            path.append(y)
            yield from rec()
            path.pop()

    if L == 0:
        yield list(path)
        return
    yield from rec()


def is_bridge(path: Sequence[Site]) -> bool:
    """Levels stay >= the start level and strictly below the final level until the end."""
    lv = [x[0] for x in path]
    N = len(lv) - 1
    return N >= 1 and all(lv[0] <= h < lv[N] for h in lv[:N])


@dataclass(frozen=True)
class Classification:
    bridge: bool
    break_points: list[int]
    irreducible: bool


def classify_irreducible(path: Sequence[Site]) -> Classification:
    """Break points are interior times at a level strictly above every earlier level
    and no higher than every later level."""
    lv = [x[0] for x in path]
    N = len(lv) - 1
    br = is_bridge(path)
    suffix_min = lv[:]
    for n in range(N - 1, -1, -1):
        suffix_min[n] = min(lv[n], suffix_min[n + 1])
    bps = []
    best = lv[0] if lv else 0
    for n in range(1, N):
        if lv[n] > best and lv[n] <= suffix_min[n + 1]:
            bps.append(n)
        best = max(best, lv[n])
    return Classification(br, bps, br and not bps)


def quenched_path_weight(path: Sequence[Site], field: DisorderField, params: ModelParams,
                         convention: str = "start") -> float:
    """Untilted weight (2d)^-N prod exp(-(lam + beta omega)) of one path."""
    N = len(path) - 1
    sites = path[:N] if convention == "start" else path[1:]
    expo = sum(params.lam + params.beta * field[x] for x in sites)
    return (2 * params.d) ** -N * math.exp(-expo)


def tilted_path_weight(path: Sequence[Site], field: DisorderField, params: ModelParams,
                       convention: str = "start") -> float:
    """Tilted-kernel probability times exp(-beta sum of centered disorder)."""
    kern = tilted_kernel(params)
    N = len(path) - 1
    prob = 1.0
    for a, b in zip(path[:-1], path[1:]):
        prob *= kern[tuple(j - i for i, j in zip(a, b))]
    sites = path[:N] if convention == "start" else path[1:]
    return prob * math.exp(-params.beta * sum(field.centered(x) for x in sites))


def annealed_path_weight(path: Sequence[Site], params: ModelParams, spec: DisorderSpec,
                         tilted: bool = False, convention: str = "start") -> float:
    """Disorder average of one path's weight, untilted/uncentered or tilted/centered."""
    N = len(path) - 1
    prof = LocalTimeProfile.from_path(path, 0, N) if convention == "start" else LocalTimeProfile.from_path(path, 1, N + 1)
    if tilted:
        kern = tilted_kernel(params)
        prob = math.prod(kern[tuple(j - i for i, j in zip(a, b))] for a, b in zip(path[:-1], path[1:]))
        return prob * annealed_weight(prof, params.beta, spec)
    phi = sum(float(phi_uncentered(params.beta * c, spec)) for c in prof.counts.values())
    return (2 * params.d) ** -N * math.exp(-params.lam * N - phi)


# ---------------------------------------------------------------------------
# quenched: dynamic program over positions


def _quenched_dp(field: DisorderField, params: ModelParams, L: int, bridge: bool, budget: EnumerationBudget,
                 radius: Optional[int], depth: Optional[int], convention: str, tilted: bool) -> OracleValue:
    reg = field.region
    d = params.d
    W = reg.radius if radius is None else radius
    floor = 0 if bridge else (reg.level_min if depth is None else -depth)
    if floor < reg.level_min or L > reg.level_max or (d > 1 and W > reg.radius):
        raise DomainError("enumeration geometry exceeds the field region")
    bound = budget.truncation_bound(params.lam)
    if tilted:
        kern = tilted_kernel(params)
        bound *= math.exp(params.kappa * L)

        def weight(x: Site) -> float:
            return math.exp(-params.beta * field.centered(x))
    else:
        kern = {s: 1.0 / (2 * d) for s in unit_steps(d)}

        def weight(x: Site) -> float:
            return math.exp(-(params.lam + params.beta * field[x]))

    origin = (0,) * d
    if L == 0:
        return OracleValue(1.0, 0.0, 1, {origin[1:]: 1.0}, tilted=1.0)
    cur: dict[Site, float] = {origin: 1.0}
    ends: dict[Site, float] = defaultdict(float)
    states = 0
    wcache: dict[Site, float] = {}

    def w(x: Site) -> float:
        if x not in wcache:
            wcache[x] = weight(x)
        return wcache[x]

    for n in range(budget.N_max):
        nxt: dict[Site, float] = defaultdict(float)
        for x, m in cur.items():
            base = m * w(x) if convention == "start" else m
            for s, p in kern.items():
                y = tuple(a + b for a, b in zip(x, s))
                if y[0] < floor or any(abs(t) > W for t in y[1:]):
                    continue
                v = base * p if convention == "start" else base * p * w(y)
                if y[0] == L:
                    ends[y[1:]] += v
                else:
                    nxt[y] += v
        states += len(nxt)
        if states > budget.max_paths:
            raise BudgetExceeded(math.fsum(ends.values()), bound, states)
        cur = nxt
    total = math.fsum(ends.values())
    return OracleValue(total, bound, states, dict(ends))


def enumerate_quenched(field: DisorderField, params: ModelParams, L: int, bridge: bool = True,
                       budget: EnumerationBudget = EnumerationBudget(), radius: Optional[int] = None,
                       depth: Optional[int] = None, convention: Optional[str] = None) -> OracleValue:
    """Exact untilted sum over admissible paths of length <= N_max.

    The geometry defaults to the full field region; pass ``radius`` and
    ``depth`` to match a slab solve on a smaller window.
    """
    conv = convention or ("start" if bridge else "end")
    res = _quenched_dp(field, params, L, bridge, budget, radius, depth, conv, tilted=False)
    res.tilted = math.exp(params.kappa * L) * res.value
    return res


def enumerate_quenched_tilted(field: DisorderField, params: ModelParams, L: int, bridge: bool = True,
                              budget: EnumerationBudget = EnumerationBudget(), radius: Optional[int] = None,
                              depth: Optional[int] = None, convention: Optional[str] = None) -> OracleValue:
    """The same path sum evaluated directly with the tilted kernel and centered weights."""
    conv = convention or ("start" if bridge else "end")
    res = _quenched_dp(field, params, L, bridge, budget, radius, depth, conv, tilted=True)
    res.tilted = res.value
    return res


# ---------------------------------------------------------------------------
# annealed: breadth-first over (position, profile, break candidates)


def _annealed_bfs(params: ModelParams, spec: DisorderSpec, L: int, bridge: bool, budget: EnumerationBudget,
                  depth: Optional[int], irreducible: bool, timed: bool = False) -> OracleValue:
    d = params.d
    if L < 1:
        raise DomainError("annealed enumeration needs L >= 1")
    floor = 0 if bridge else (-budget.N_max if depth is None else -depth)
    convention = "start" if bridge else "end"
    q = math.exp(-params.lam) / (2 * d)
    steps = unit_steps(d)
    phi_cache: dict[int, float] = {}

    def phi(c: int) -> float:
        if c not in phi_cache:
            phi_cache[c] = float(phi_uncentered(params.beta * c, spec))
        return phi_cache[c]

    def bump(prof: tuple, x: Site) -> tuple[tuple, float]:
        """Add one visit at x; returns the new profile and the log-weight increment."""
        dct = dict(prof)
        c = dct.get(x, 0)
        dct[x] = c + 1
        return tuple(sorted(dct.items())), phi(c + 1) - phi(c)

    origin = (0,) * d
    # state: (position, profile, max level, candidate mask) -> (mass, -log annealed factor)
    cur: dict[tuple, list[float]] = {(origin, (), 0, 0): [1.0, 0.0]}
    ends: dict[Site, float] = defaultdict(float)
    timed_ends: dict[tuple[int, Site], float] = defaultdict(float)
    states = 0
    pruned = 0.0
    bound0 = budget.truncation_bound(params.lam)
    for n in range(budget.N_max):
        nxt: dict[tuple, list[float]] = {}
        for (x, prof, top, mask), (m, lphi) in cur.items():
            if convention == "start":
                prof, inc = bump(prof, x)
                lphi = lphi + inc
            for s in steps:
                y = tuple(a + b for a, b in zip(x, s))
                if y[0] < floor:
                    continue
                p2, lp2 = (prof, lphi) if convention == "start" else bump(prof, y)
                if convention == "end":
                    lp2 = lphi + lp2
                v = m * q
                if y[0] == L:
                    if irreducible and mask:
                        continue
                    ends[y[1:]] += v * math.exp(-lp2)
                    if timed:
                        timed_ends[(n + 1, y[1:])] += v * math.exp(-lp2)
                    continue
                mk, tp = mask, top
                if irreducible:
                    mk &= (1 << (y[0] + 1)) - 1 if y[0] >= 0 else 0
                    if y[0] > top:
                        tp = y[0]
                        mk |= 1 << y[0]
                key = (y, p2, tp, mk)
                if key in nxt:
                    nxt[key][0] += v
                else:
                    nxt[key] = [v, lp2]
        if budget.prune_tol > 0:
            keep = {}
            for k, (m, lp) in nxt.items():
                if m * math.exp(-lp) < budget.prune_tol:
                    pruned += m * math.exp(-lp)
                else:
                    keep[k] = [m, lp]
            nxt = keep
        states += len(nxt)
        if states > budget.max_paths:
            raise BudgetExceeded(math.fsum(ends.values()), bound0 + pruned / (1 - math.exp(-params.lam)), states)
        cur = nxt
    total = math.fsum(ends.values())
    bound = bound0 + pruned / (1 - math.exp(-params.lam))
    return OracleValue(total, bound, states, dict(ends), tilted=math.exp(params.kappa * L) * total,
                       by_duration=dict(timed_ends))


def enumerate_annealed(params: ModelParams, spec: DisorderSpec, L: int, bridge: bool = True,
                       budget: EnumerationBudget = EnumerationBudget(), depth: Optional[int] = None) -> OracleValue:
    """Untilted uncentered annealed sum: (2d)^-N exp(-lam N - sum_x phi(beta l(x))) over paths.

    ``tilted`` on the result holds the tilted-centered form exp(kappa L) * value.
    """
    return _annealed_bfs(params, spec, L, bridge, budget, depth, irreducible=False)


def enumerate_irreducible_annealed(params: ModelParams, spec: DisorderSpec, L: int,
                                   budget: EnumerationBudget = EnumerationBudget(),
                                   timed: bool = False) -> OracleValue:
    """Annealed sum restricted to irreducible bridges of span L.

    With ``timed`` the result also splits the sum by (duration, transverse endpoint).
    """
    return _annealed_bfs(params, spec, L, True, budget, None, irreducible=True, timed=timed)


# ---------------------------------------------------------------------------
# d = 1: transfer over crossing numbers


@dataclass
class CrossingTransfer:
    """Exact d=1 annealed bridge sums via up-crossing counts.

    A d=1 bridge to level L is fixed up to ordering by its up-crossing numbers
    u_0..u_{L-1} (u_{L-1} = 1): level h is visited u_h + u_{h-1} - 1 times
    (u_0 times for h = 0), and there are C(u_h + u_{h-1} - 2, u_h - 1) orderings
    at each h >= 1. Irreducible bridges are those with u_h >= 2 for h < L - 1.
    Omitted paths have some u_h > u_max, hence at least 2 u_max + 1 steps.

    ``log_bridge[L-1]`` and ``log_irreducible[L-1]`` are logs of the untilted
    uncentered sums; ``duration`` optionally holds the irreducible law split by
    number of steps.
    """

    params: ModelParams
    spec: DisorderSpec
    u_max: int
    log_bridge: np.ndarray
    log_irreducible: np.ndarray
    bound: float
    duration: Optional[np.ndarray] = None

    @property
    def bridge(self) -> np.ndarray:
        return np.exp(self.log_bridge)

    @property
    def irreducible(self) -> np.ndarray:
        return np.exp(self.log_irreducible)


def crossing_transfer(params: ModelParams, spec: DisorderSpec, L_max: int, u_max: Optional[int] = None,
                      tol: float = 1e-15, n_cap: int = 0) -> CrossingTransfer:
    """Run the crossing-number transfer for all spans 1..L_max.

    Without ``u_max`` the cutoff doubles until the omitted mass is below
    ``tol`` times the smallest bridge value. ``n_cap > 0`` also tabulates
    irreducible weights by duration N < n_cap.
    """
    if params.d != 1:
        raise DomainError("crossing transfer is specific to d = 1")
    if u_max is not None:
        return _crossing_transfer(params, spec, L_max, u_max, n_cap)
    lam = params.lam
    u = max(4, int(math.ceil((params.kappa + 2 * lam) * L_max / (2 * lam))) + 8)
    while True:
        ct = _crossing_transfer(params, spec, L_max, u, n_cap)
        if ct.bound <= tol * math.exp(ct.log_bridge.min()):
            return ct
        u *= 2


def _crossing_transfer(params: ModelParams, spec: DisorderSpec, L_max: int, u_max: int,
                       n_cap: int) -> CrossingTransfer:
    lam, beta = params.lam, params.beta
    q = math.exp(-lam)
    # omitted mass <= q^(2u+1) / (1 - q)
    bound = q ** (2 * u_max + 1) / (1 - q)
    u = np.arange(1, u_max + 1)
    lstep = -lam - math.log(2.0)
    visits = np.arange(0, 2 * u_max + 1)
    lphi = np.asarray(phi_uncentered(beta * visits.astype(float), spec), dtype=float)
    lvis = visits * lstep - lphi  # log weight of a level visited k times
    U, V = np.meshgrid(u, u, indexing="ij")
    k = U + V - 1
    lbinom = gammaln(U + V - 1) - gammaln(V) - gammaln(U)
    lK = lbinom + lvis[k]  # transfer kernel u -> v
    f0 = lvis[u]  # level 0 visited u_0 times
    logB = np.empty(L_max)
    logI = np.empty(L_max)
    f_all = f0.copy()
    f_irr = np.where(u >= 2, f0, -np.inf)
    logB[0] = f0[0]
    logI[0] = f0[0]
    dur = None
    if n_cap:
        dur = np.zeros((L_max, n_cap))
        g = np.zeros((u_max, n_cap))
        for i, uu in enumerate(u):
            if uu < n_cap:
                g[i, uu] = math.exp(lvis[uu])
        dur[0] = g[0]
        g_irr = g * (u >= 2)[:, None]
    for L in range(2, L_max + 1):
        # value of span L: last level L-1 has u = 1
        logB[L - 1] = logsumexp(f_all + lK[:, 0])
        logI[L - 1] = logsumexp(f_irr + lK[:, 0])
        f_all = logsumexp(f_all[:, None] + lK, axis=0)
        f_irr = logsumexp(f_irr[:, None] + lK, axis=0)
        f_irr = np.where(u >= 2, f_irr, -np.inf)
        if dur is not None:
            dur[L - 1] = _shift_mix(g_irr, lK[:, 0], k[:, 0], n_cap)
            g_irr = np.stack([_shift_mix(g_irr, lK[:, j], k[:, j], n_cap) for j in range(u_max)])
            g_irr[0] = 0.0
    return CrossingTransfer(params, spec, u_max, logB, logI, bound, dur)


def _shift_mix(g: np.ndarray, lk: np.ndarray, shift: np.ndarray, n_cap: int) -> np.ndarray:
    out = np.zeros(n_cap)
    for i in range(g.shape[0]):
        s = int(shift[i])
        if s < n_cap and np.isfinite(lk[i]):
            out[s:] += math.exp(lk[i]) * g[i, : n_cap - s]
    return out
