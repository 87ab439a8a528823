"""Annealed bridge series, irreducible-bridge deconvolution, masses and renewal diagnostics.

Conventions: ``B(L)`` denotes the tilted-centered annealed bridge value, which
equals ``exp(kappa L)`` times the untilted uncentered sum. Masses are decay
rates of tilted values, so norms are ``kappa + mass``. The irreducible weights
solve ``B(L) = sum_{k=1}^{L} I(k) B(L-k)`` with ``B(0) = 1``; the normalized
law is ``I_hat(L) = exp(m L) I(L)`` with mean ``mu``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .field import FieldRegion, sample_field
from .model import DisorderSpec, DomainError, ModelParams
from .oracle import EnumerationBudget, crossing_transfer, enumerate_annealed, enumerate_irreducible_annealed
from .parallel import fmean_columns, parallel_map
from .slab import sweep_levels

Z95 = 1.959963984540054


class InsufficientDataError(ValueError):
    pass


class TruncatedSupportWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# series


@dataclass
class BridgeSeries:
    """Annealed bridge values B(1..L_max).

    ``log_samples`` keeps per-replica log values (Monte Carlo mode) so that
    downstream estimators can resample replicas. ``endpoints[L-1]`` is the
    replica-mean endpoint-resolved value over the transverse window, when built.
    """

    L: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    replicas: int
    provenance: Literal["oracle", "monte_carlo"]
    params: ModelParams
    spec: DisorderSpec
    bound: np.ndarray = field(default_factory=lambda: np.zeros(0))
    log_values: Optional[np.ndarray] = None
    log_samples: Optional[np.ndarray] = field(default=None, repr=False)
    endpoints: Optional[list[np.ndarray]] = field(default=None, repr=False)
    endpoint_stderr: Optional[list[np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not np.array_equal(self.L, np.arange(1, len(self.L) + 1)):
            raise DomainError("series must cover L = 1, 2, ... contiguously")
        if self.log_values is None:
            self.log_values = np.log(self.values)
        if self.bound.size == 0:
            self.bound = np.zeros(len(self.L))

    @property
    def L_max(self) -> int:
        return int(self.L[-1])

    def rows(self) -> list[dict]:
        return [
            {"L": int(l), "estimate": float(v), "stderr": float(s), "replicas": self.replicas}
            for l, v, s in zip(self.L, self.values, self.stderr)
        ]

    def supermultiplicativity_violations(self, n_se: float = 3.0) -> list[tuple[int, int]]:
        """Pairs (L1, L2) with B(L1+L2) < B(L1) B(L2) beyond ``n_se`` combined standard errors."""
        bad = []
        B, S = self.values, self.stderr
        for a in range(1, self.L_max):
            for b in range(a, self.L_max - a + 1):
                lhs, rhs = B[a + b - 1], B[a - 1] * B[b - 1]
                se = math.sqrt(S[a + b - 1] ** 2 + (B[a - 1] * S[b - 1]) ** 2 + (B[b - 1] * S[a - 1]) ** 2)
                if lhs < rhs - n_se * se - self.bound[a + b - 1]:
                    bad.append((a, b))
        return bad


def _replica_sweep(task: tuple) -> tuple[np.ndarray, Optional[list[np.ndarray]]]:
    params, spec, L_max, radius, seed, r, endpoints = task
    region = FieldRegion(params.d, 0, L_max, radius)
    f = sample_field(spec, region, seed, r)
    sw = sweep_levels(params, f, L_max, radius=radius)
    logs = sw.log_tilted()
    eps = [e * math.exp(lt) for e, lt in zip(sw.endpoints, logs)] if endpoints else None
    return logs, eps


def replica_bridge_logs(params: ModelParams, spec: DisorderSpec, L_max: int, replicas: int, seed: int,
                        radius: int, endpoints: bool = False, workers: Optional[int] = None,
                        first_replica: int = 0) -> tuple[np.ndarray, Optional[list[list[np.ndarray]]]]:
    """Per-replica log tilted bridge values, shape (replicas, L_max)."""
    tasks = [(params, spec, L_max, radius, seed, first_replica + r, endpoints) for r in range(replicas)]
    out = parallel_map(_replica_sweep, tasks, workers)
    logs = np.array([o[0] for o in out])
    eps = [o[1] for o in out] if endpoints else None
    return logs, eps


def default_radius(d: int, L_max: int) -> int:
    """Transverse window wide enough that truncation is far below solver tolerance."""
    return 1 if d == 1 else int(math.ceil(4 * math.sqrt(L_max))) + 4


def build_annealed_series(
    params: ModelParams,
    spec: DisorderSpec,
    L_max: int,
    replicas: int = 0,
    seed: int = 0,
    mode: Literal["auto", "oracle", "monte_carlo"] = "auto",
    radius: Optional[int] = None,
    endpoints: bool = False,
    workers: Optional[int] = None,
    budget: EnumerationBudget = EnumerationBudget(),
) -> BridgeSeries:
    """Annealed bridge values as exact sums (oracle) or replica means of quenched solves.

    Oracle mode uses the crossing-number transfer in d = 1 and breadth-first
    enumeration otherwise; ``auto`` picks oracle in d = 1 and when replicas == 0.
    """
    if L_max < 1:
        raise DomainError("L_max must be >= 1")
    if mode == "auto":
        mode = "oracle" if (params.d == 1 or replicas == 0) else "monte_carlo"
    L = np.arange(1, L_max + 1)
    if mode == "oracle":
        if params.d == 1:
            ct = crossing_transfer(params, spec, L_max)
            logv = ct.log_bridge + params.kappa * L
            bound = ct.bound * np.exp(params.kappa * L)
        else:
            vals = [enumerate_annealed(params, spec, int(l), budget=budget) for l in L]
            logv = np.log([v.value for v in vals]) + params.kappa * L
            bound = np.array([v.bound for v in vals]) * np.exp(params.kappa * L)
        return BridgeSeries(L, np.exp(logv), np.zeros(L_max), 0, "oracle", params, spec,
                            bound=bound, log_values=logv)
    if replicas < 2:
        raise InsufficientDataError("Monte Carlo series needs at least 2 replicas")
    W = radius or default_radius(params.d, L_max)
    logs, eps = replica_bridge_logs(params, spec, L_max, replicas, seed, W, endpoints, workers)
    return series_from_log_samples(logs, params, spec, eps)


def series_from_log_samples(log_samples: np.ndarray, params: ModelParams, spec: DisorderSpec,
                            endpoints: Optional[list[list[np.ndarray]]] = None) -> BridgeSeries:
    """Monte Carlo series from per-replica log tilted values, shape (replicas, L_max)."""
    R, L_max = log_samples.shape
    if R < 2:
        raise InsufficientDataError("Monte Carlo series needs at least 2 replicas")
    shift = log_samples.max(axis=0)
    scaled = np.exp(log_samples - shift)
    mean = fmean_columns(scaled)
    se = scaled.std(axis=0, ddof=1) / math.sqrt(R)
    logv = np.log(mean) + shift
    ep_mean = ep_se = None
    if endpoints is not None:
        ep_mean, ep_se = [], []
        for j in range(L_max):
            stack = np.stack([e[j] for e in endpoints])
            ep_mean.append(fmean_columns(stack.reshape(R, -1)).reshape(stack.shape[1:]))
            ep_se.append(stack.std(axis=0, ddof=1) / math.sqrt(R))
    return BridgeSeries(np.arange(1, L_max + 1), np.exp(logv), se * np.exp(shift), R, "monte_carlo", params, spec,
                        log_values=logv, log_samples=log_samples, endpoints=ep_mean, endpoint_stderr=ep_se)


# ---------------------------------------------------------------------------
# masses


@dataclass
class MassEstimate:
    value: float
    ci_halfwidth: float
    method: Literal["slope_fit", "fekete_bound", "log_mean"]
    L_range: tuple[int, int]
    intercept: float = math.nan
    sandwich_lower_ok: Optional[np.ndarray] = field(default=None, repr=False)
    sandwich_upper_ok: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def sandwich_holds(self) -> bool:
        if self.sandwich_lower_ok is None:
            return False
        return bool(self.sandwich_lower_ok.all() and self.sandwich_upper_ok.all())


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Slope, intercept and slope standard error of y = a x + b."""
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    n = len(x)
    if n <= 2:
        return float(coef[0]), float(coef[1]), 0.0
    resid = y - X @ coef
    s2 = float(resid @ resid) / (n - 2)
    var = s2 * np.linalg.inv(X.T @ X)[0, 0]
    return float(coef[0]), float(coef[1]), math.sqrt(max(var, 0.0))


def slope_tolerance(x: np.ndarray, rel_err: float) -> float:
    """Largest OLS slope change when every log value moves by at most ``rel_err``."""
    x = np.asarray(x, dtype=float)
    dx = x - x.mean()
    return float(rel_err * np.abs(dx).sum() / (dx @ dx)) if len(x) > 1 else 0.0


def _jackknife_se(stat, samples: np.ndarray) -> float:
    n = samples.shape[0]
    vals = np.array([stat(np.delete(samples, i, axis=0)) for i in range(n)])
    return math.sqrt((n - 1) / n * float(((vals - vals.mean()) ** 2).sum()))


def _log_mean_rows(logs: np.ndarray) -> np.ndarray:
    shift = logs.max(axis=0)
    return np.log(np.exp(logs - shift).mean(axis=0)) + shift


def estimate_annealed_mass(
    series: BridgeSeries,
    L_min: Optional[int] = None,
    L_max: Optional[int] = None,
    method: Literal["slope_fit", "fekete_bound", "log_mean"] = "slope_fit",
    mu0: Optional[float] = None,
    solver_tol: float = 0.0,
) -> MassEstimate:
    """Mass of the annealed series and the one-point sandwich check at every L.

    The sandwich is ``m <= -(1/L) log B(L) <= m - log(mu0_star)/L`` with
    ``mu0_star = mu0 / (1 + mu0)`` (see :func:`sandwich_constant`), each side
    allowed the estimate's CI halfwidth. ``solver_tol`` is the relative accuracy
    of Monte Carlo inputs; its worst-case effect is added to the CI.
    """
    Lmax = L_max or series.L_max
    if L_min is None:
        L_min = max(1, Lmax // 2) if series.provenance == "oracle" else min(4, Lmax)
    Ls = np.arange(L_min, Lmax + 1)
    if len(Ls) < 4 and method == "slope_fit":
        raise InsufficientDataError("slope fit needs at least 4 values of L")
    y = -series.log_values[Ls - 1]
    intercept = math.nan
    if method == "slope_fit":
        m, b, se_fit = _ols(Ls.astype(float), y)
        intercept = -b
        if series.log_samples is not None:
            se = _jackknife_se(lambda s: _ols(Ls.astype(float), -_log_mean_rows(s)[Ls - 1])[0], series.log_samples)
            ci = Z95 * se + slope_tolerance(Ls, solver_tol)
        else:
            rel = series.bound[Ls - 1] / series.values[Ls - 1]
            ci = Z95 * se_fit + 2 * float(rel.max()) / max(1, Ls[-1] - Ls[0])
    elif method == "log_mean":
        m = float(y[-1] / Ls[-1])
        if series.log_samples is not None:
            ci = Z95 * _jackknife_se(lambda s: -_log_mean_rows(s)[Ls[-1] - 1] / Ls[-1], series.log_samples)
            ci += solver_tol / Ls[-1]
        else:
            ci = float(series.bound[Ls[-1] - 1] / series.values[Ls[-1] - 1]) / Ls[-1]
    elif method == "fekete_bound":
        if mu0 is None:
            mu0 = compute_mu0(series.params.d, series.params.lam)
        e = -series.log_values / series.L
        upper = float(e.min())
        lower = float((e + math.log(sandwich_constant(mu0)) / series.L).max())
        m, ci = 0.5 * (upper + lower), 0.5 * (upper - lower)
    else:
        raise DomainError(f"unknown method {method}")
    est = MassEstimate(float(m), float(ci), method, (int(Ls[0]), int(Ls[-1])), intercept)
    if mu0 is None:
        mu0 = compute_mu0(series.params.d, series.params.lam)
    e = -series.log_values / series.L
    tol = est.ci_halfwidth + series.bound / series.values
    if series.log_samples is not None:
        tol = tol + Z95 * series.stderr / series.values / series.L
    est.sandwich_lower_ok = e >= est.value - tol
    est.sandwich_upper_ok = e <= est.value - math.log(sandwich_constant(mu0)) / series.L + tol
    return est


def estimate_quenched_mass(log_samples: np.ndarray, Ls: Sequence[int], solver_tol: float = 0.0) -> MassEstimate:
    """Replica mean of per-replica slopes of -log B_omega(L) against L.

    The CI adds the worst-case slope shift from relative solver error ``solver_tol``.
    """
    Ls = np.asarray(Ls)
    if log_samples.shape[0] < 2:
        raise InsufficientDataError("quenched mass needs at least 2 replicas")
    if len(Ls) < 2:
        raise InsufficientDataError("quenched mass needs at least 2 values of L")
    slopes = np.array([_ols(Ls.astype(float), -row[Ls - 1])[0] for row in log_samples])
    ci = Z95 * slopes.std(ddof=1) / math.sqrt(len(slopes)) + slope_tolerance(Ls, solver_tol)
    return MassEstimate(float(slopes.mean()), float(ci), "slope_fit", (int(Ls[0]), int(Ls[-1])))


# ---------------------------------------------------------------------------
# mu0


def _lazy_params(d: int) -> tuple[float, float]:
    """(hold probability, probability of each of +1 and -1) for the e_1 marginal."""
    return (d - 1) / d, 1.0 / (2 * d)


def return_series_direct(d: int, lam: float, tol: float = 1e-14) -> float:
    """sum_{n>=1} exp(-lam n) P(X_n = 0) by exact convolution of the lazy-walk law."""
    h, a = _lazy_params(d)
    q = math.exp(-lam)
    n_max = int(math.ceil(math.log(tol * (1 - q)) / math.log(q))) + 1
    dist = np.zeros(2 * n_max + 3)
    c = n_max + 1
    dist[c] = 1.0
    terms = []
    for n in range(1, n_max + 1):
        new = h * dist
        new[1:] += a * dist[:-1]
        new[:-1] += a * dist[1:]
        dist = new
        terms.append(q**n * dist[c])
    return math.fsum(terms)


def return_series_recursion(d: int, lam: float, tol: float = 1e-14) -> float:
    """The same series from the recursion n T_n = h(2n-1) T_{n-1} - (n-1)(h^2 - 4a^2) T_{n-2}
    for the central coefficient T_n of (h + a z + a/z)^n, carried with the factor q^n."""
    h, a = _lazy_params(d)
    q = math.exp(-lam)
    n_max = int(math.ceil(math.log(tol * (1 - q)) / math.log(q))) + 1
    t_prev, t_cur = 1.0, h * q  # q^0 T_0, q^1 T_1
    terms = [t_cur]
    c2 = h * h - 4 * a * a
    for n in range(2, n_max + 1):
        t_next = (h * (2 * n - 1) * q * t_cur - (n - 1) * c2 * q * q * t_prev) / n
        terms.append(t_next)
        t_prev, t_cur = t_cur, t_next
    return math.fsum(terms)


def return_series_closed(d: int, lam: float) -> float:
    """Generating function (1 - h x)^2 - 4 a^2 x^2 raised to -1/2, minus the n = 0 term."""
    h, a = _lazy_params(d)
    x = math.exp(-lam)
    return 1.0 / math.sqrt((1 - h * x) ** 2 - 4 * a * a * x * x) - 1.0


def compute_mu0(d: int, lam: float, method: Literal["direct", "recursion", "closed"] = "direct") -> float:
    """mu0 = (sum_{n>=1} exp(-lam n) P(X_n = 0))^-1 for the lazy e_1 marginal."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    fn = {"direct": return_series_direct, "recursion": return_series_recursion}.get(method)
    s = fn(d, lam) if fn else return_series_closed(d, lam)
    return math.inf if s == 0 else 1.0 / s


def sandwich_constant(mu0: float) -> float:
    """Supermultiplicativity constant for the one-point upper bound, mu0 / (1 + mu0).

    Including the n = 0 term of the return series gives the constant below 1
    needed for B(L) >= const * exp(-m L).
    """
    return 1.0 if math.isinf(mu0) else mu0 / (1.0 + mu0)


# ---------------------------------------------------------------------------
# deconvolution


def deconvolve(B: np.ndarray) -> np.ndarray:
    """I(L) = B(L) - sum_{k<L} I(k) B(L-k), with B(0) = 1."""
    B = np.asarray(B, dtype=float)
    n = len(B)
    I = np.zeros(n)
    for L in range(1, n + 1):
        acc = math.fsum(I[k - 1] * B[L - k - 1] for k in range(1, L))
        I[L - 1] = B[L - 1] - acc
    return I


def reconvolve(I: np.ndarray) -> np.ndarray:
    """Inverse of :func:`deconvolve`."""
    I = np.asarray(I, dtype=float)
    n = len(I)
    B = np.zeros(n)
    for L in range(1, n + 1):
        B[L - 1] = I[L - 1] + math.fsum(I[k - 1] * B[L - k - 1] for k in range(1, L))
    return B


@dataclass
class RenewalTable:
    L: np.ndarray
    irreducible: np.ndarray
    irreducible_stderr: np.ndarray
    normalized: np.ndarray
    mass_used: float
    residual: float
    mean: float
    noise_flags: list[int] = field(default_factory=list)
    sensitivity: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [
            {"L": int(l), "irreducible": float(i), "stderr": float(s), "normalized": float(n)}
            for l, i, s, n in zip(self.L, self.irreducible, self.irreducible_stderr, self.normalized)
        ]


def _normalized(I: np.ndarray, se: np.ndarray, m: float, L: np.ndarray) -> tuple[np.ndarray, list[int]]:
    clamp = (I < 0) & (I >= -2 * se)
    flags = [int(l) for l in L[(I < 0) & ~clamp]]
    return np.exp(m * L) * np.where(clamp, 0.0, I), flags


def deconvolve_irreducible(series: BridgeSeries, mass: Optional[MassEstimate] = None) -> RenewalTable:
    """Irreducible weights, their normalized law and the probability-identity residual.

    Negative weights within two standard errors are zeroed in ``normalized``
    only; those beyond are listed in ``noise_flags``. ``residual`` uses the
    unclamped weights; the clamped sum is reported as ``residual_clamped``. ``sensitivity`` gives the
    residual with the mass moved to either end of its CI.
    """
    mass = mass or estimate_annealed_mass(series)
    I = deconvolve(series.values)
    if series.log_samples is not None:
        logs = series.log_samples
        n = logs.shape[0]
        reps = np.array([deconvolve(np.exp(_log_mean_rows(np.delete(logs, i, axis=0)))) for i in range(n)])
        se = np.sqrt((n - 1) / n * ((reps - reps.mean(axis=0)) ** 2).sum(axis=0))
    else:
        se = np.abs(deconvolve(series.values + series.bound) - I)
    L = series.L
    Ih, flags = _normalized(I, se, mass.value, L)
    # clamping is one-sided, so the identity is checked on the raw weights
    residual = abs(math.fsum(np.exp(mass.value * L) * I) - 1.0)
    mean = math.fsum(L * Ih)
    sens = {"residual_clamped": abs(math.fsum(Ih) - 1.0)}
    for tag, m in (("mass_low", mass.value - mass.ci_halfwidth), ("mass_high", mass.value + mass.ci_halfwidth)):
        sens[tag] = m
        sens[f"residual_{tag}"] = abs(math.fsum(np.exp(m * L) * I) - 1.0)
    return RenewalTable(L, I, se, Ih, mass.value, residual, mean, flags, sens)


@dataclass
class GapFit:
    rho: float
    ci_halfwidth: float
    L_range: tuple[int, int]


def mass_gap_fit(table: RenewalTable, noise_floor: Optional[float] = None, L_min: int = 2) -> GapFit:
    """Exponential tail rate of the normalized irreducible law over its valid prefix."""
    if len(table.L) < 6:
        raise InsufficientDataError("mass gap fit needs at least 6 entries")
    floor = 0.0 if noise_floor is None else noise_floor
    Ih = table.normalized
    se = np.exp(table.mass_used * table.L) * table.irreducible_stderr
    valid = (Ih > floor) & (Ih > 2 * se)
    end = len(Ih)
    for i in range(L_min - 1, len(Ih)):
        if not valid[i]:
            end = i
            break
    Ls = table.L[L_min - 1:end]
    if len(Ls) < 3:
        raise InsufficientDataError("too few positive tail values for a gap fit")
    slope, _, sse = _ols(Ls.astype(float), np.log(Ih[Ls - 1]))
    return GapFit(-slope, Z95 * sse, (int(Ls[0]), int(Ls[-1])))


def renewal_theorem_product(series: BridgeSeries, table: RenewalTable, L: Optional[int] = None) -> float:
    """B_hat(L) * mu at the given (default largest) L; tends to 1."""
    L = L or series.L_max
    return math.exp(table.mass_used * L + series.log_values[L - 1]) * table.mean


# ---------------------------------------------------------------------------
# Markov renewal sampling


@dataclass
class BlockLaw:
    """Normalized law of one irreducible block on a truncated support."""

    spans: np.ndarray
    displacements: np.ndarray  # (k, d-1)
    durations: np.ndarray
    probs: np.ndarray
    support_mass: float
    mass_used: float


def irreducible_block_law(params: ModelParams, spec: DisorderSpec, L_cut: int, mass: Optional[float] = None,
                          n_cap: int = 400, budget: Optional[EnumerationBudget] = None) -> BlockLaw:
    """Tabulate exp(m L) times the tilted annealed irreducible weight by (span, displacement, duration).

    ``support_mass`` is the total normalized weight captured before renormalization.
    """
    d = params.d
    if mass is None:
        ref = build_annealed_series(params, spec, max(8, 2 * L_cut), mode="oracle",
                                    budget=budget or EnumerationBudget(24))
        mass = estimate_annealed_mass(ref).value
    spans, disps, durs, w = [], [], [], []
    if d == 1:
        ct = crossing_transfer(params, spec, L_cut, n_cap=n_cap)
        for L in range(1, L_cut + 1):
            row = ct.duration[L - 1] * math.exp((mass + params.kappa) * L)
            for N in np.nonzero(row)[0]:
                spans.append(L)
                disps.append(())
                durs.append(int(N))
                w.append(row[N])
    else:
        bud = budget or EnumerationBudget(24, prune_tol=1e-16)
        for L in range(1, L_cut + 1):
            res = enumerate_irreducible_annealed(params, spec, L, bud, timed=True)
            for (N, x), v in res.by_duration.items():
                spans.append(L)
                disps.append(x)
                durs.append(N)
                w.append(v * math.exp((mass + params.kappa) * L))
    w = np.array(w)
    total = math.fsum(w)
    if total < 0.99:
        warnings.warn(f"truncated block support carries mass {total:.4f} (deficit {1 - total:.4f})",
                      TruncatedSupportWarning, stacklevel=2)
    return BlockLaw(np.array(spans), np.array(disps, dtype=int).reshape(len(w), d - 1), np.array(durs),
                    w / total, total, mass)


@dataclass
class MarkovRenewalSample:
    spans: np.ndarray
    displacements: np.ndarray
    durations: np.ndarray
    law: BlockLaw

    @property
    def break_levels(self) -> np.ndarray:
        return np.cumsum(self.spans)

    @property
    def break_times(self) -> np.ndarray:
        return np.cumsum(self.durations)

    @property
    def break_positions(self) -> np.ndarray:
        return np.column_stack([self.break_levels, np.cumsum(self.displacements, axis=0)])


def sample_markov_renewal(params: ModelParams, spec: DisorderSpec, L_cut: int, n_blocks: int, seed: int,
                          mass: Optional[float] = None, law: Optional[BlockLaw] = None) -> MarkovRenewalSample:
    """i.i.d. irreducible blocks from the tabulated normalized law.

    Blocks sit in disjoint slabs of an i.i.d. environment, so the chain of
    blocks is i.i.d. in law.
    """
    law = law or irreducible_block_law(params, spec, L_cut, mass)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(law.probs), size=n_blocks, p=law.probs)
    return MarkovRenewalSample(law.spans[idx], law.displacements[idx], law.durations[idx], law)


@dataclass
class TailFit:
    slope: float
    intercept: float
    r_squared: float
    u: np.ndarray
    log_survival: np.ndarray


def survival_tail_fit(samples: np.ndarray, min_count: int = 30) -> TailFit:
    """Linear fit of log P(X > u) over the support values with at least ``min_count`` exceedances."""
    x = np.sort(np.asarray(samples))
    n = len(x)
    u = np.unique(x)
    surv = 1.0 - np.searchsorted(x, u, side="right") / n
    keep = surv * n >= min_count
    u, surv = u[keep], surv[keep]
    if len(u) < 3:
        raise InsufficientDataError("too few tail points")
    ls = np.log(surv)
    slope, b, _ = _ols(u.astype(float), ls)
    pred = slope * u + b
    ss_res = float(((ls - pred) ** 2).sum())
    ss_tot = float(((ls - ls.mean()) ** 2).sum())
    return TailFit(slope, b, 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0, u, ls)


# ---------------------------------------------------------------------------
# local-limit envelope


@dataclass
class EnvelopeCheck:
    passed: bool
    amplitude: float
    rate: float
    variance_slope: float
    max_ratio: float
    threshold: float
    variances: dict[int, float] = field(default_factory=dict)


def local_clt_envelope_check(series: BridgeSeries, Ls: Sequence[int], mass: Optional[MassEstimate] = None,
                             inflation: float = 2.0) -> EnvelopeCheck:
    """Check B_hat(L; x) <= A L^{-(d-1)/2} exp(-c |x|^2 / (2L)) on the window.

    ``A`` is the largest scaled center value over L. The rate ``c`` is the
    largest value keeping every point under the envelope up to 1 + 3 relative
    standard errors, capped by the diffusive rate ``1 / (inflation * s)`` where
    ``s`` is the fitted slope of the transverse variance. Passes when the
    variance grows (s > 0), c > 0 and every ratio stays under its threshold.
    """
    d = series.params.d
    Ls = sorted(int(l) for l in Ls)
    if d == 1:
        return EnvelopeCheck(True, 1.0, math.inf, 0.0, 1.0, 1.0)
    if series.endpoints is None or len(Ls) < 3:
        raise InsufficientDataError("need an endpoint-resolved series at >= 3 values of L")
    m = (mass or estimate_annealed_mass(series)).value
    k = d - 1
    prof, rse, var = {}, {}, {}
    for L in Ls:
        e = np.asarray(series.endpoints[L - 1]) * math.exp(m * L)
        s = np.asarray(series.endpoint_stderr[L - 1]) * math.exp(m * L)
        W = (e.shape[0] - 1) // 2
        grids = np.meshgrid(*([np.arange(-W, W + 1)] * k), indexing="ij")
        r2 = sum(g.astype(float) ** 2 for g in grids)
        prof[L] = (e, r2)
        rse[L] = np.divide(s, e, out=np.zeros_like(e), where=e > 0)
        var[L] = float((e * r2).sum() / e.sum()) / k
    vslope, _, _ = _ols(np.array(Ls, float), np.array([var[L] for L in Ls]))
    center = tuple([(prof[Ls[0]][0].shape[0] - 1) // 2] * k)
    A = max(prof[L][0][center] * L ** (k / 2) for L in Ls)
    c = 1.0 / (inflation * vslope) if vslope > 0 else 0.0
    for L in Ls:
        e, r2 = prof[L]
        ok = (e > 0) & (r2 > 0)
        room = np.log(A * L ** (-k / 2) * (1 + 3 * rse[L][ok]) / e[ok])
        c = min(c, float((2 * L * room / r2[ok]).min()))
    worst, thr = 0.0, 1.0
    for L in Ls:
        e, r2 = prof[L]
        ratio = e / (A * L ** (-k / 2) * np.exp(-c * r2 / (2 * L)))
        i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        if ratio[i] > worst:
            worst, thr = float(ratio[i]), 1.0 + 3.0 * float(rse[L][i]) + 1e-12
    passed = vslope > 0 and c > 0 and worst <= thr
    return EnvelopeCheck(passed, float(A), float(c), float(vslope), worst, thr, var)
