"""Headline experiments built on the solver, oracle and renewal layers.

Each operation takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentResult` holding named tables (fixed column sets) and a
summary dictionary. Replicas are processed by an order-preserving parallel
map; a run fails with :class:`NumericalFailure` when more than 10% of its
replicas fail.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from ..field import FieldRegion, sample_field
from ..model import DisorderSpec, ModelParams, phi_bar_prime, phi_uncentered
from ..oracle import EnumerationBudget, enumerate_annealed, enumerate_irreducible_annealed, enumerate_quenched
from ..parallel import parallel_map
from ..renewal import (
    Z95,
    BridgeSeries,
    MassEstimate,
    build_annealed_series,
    compute_mu0,
    deconvolve_irreducible,
    default_radius,
    estimate_annealed_mass,
    estimate_quenched_mass,
    local_clt_envelope_check,
    mass_gap_fit,
    renewal_theorem_product,
    sample_markov_renewal,
    sandwich_constant,
    series_from_log_samples,
    survival_tail_fit,
)
from ..slab import SlabSystem, endpoint_measure, measure_from_weights, solve_forward, sweep_levels
from .config import PERCOLATION_THRESHOLDS, ExperimentConfig

FAILURE_FRACTION = 0.10

SERIES_COLUMNS = ("L", "estimate", "stderr", "replicas")
SWEEP_COLUMNS = ("beta", "alpha_star", "beta_star", "phi_beta", "alpha_star_ci", "beta_star_ci",
                 "beta_star_over_beta", "beta_star_over_beta_ci", "alpha_star_over_beta", "annealed_bound_constant")


class NumericalFailure(RuntimeError):
    def __init__(self, failed: Sequence[int], total: int, first_error: str):
        super().__init__(f"{len(failed)} of {total} replicas failed (first: {first_error})")
        self.failed = list(failed)


class PreconditionWarning(UserWarning):
    pass


@dataclass
class ExperimentResult:
    kind: str
    summary: dict
    tables: dict[str, tuple[tuple[str, ...], list[dict]]] = field(default_factory=dict)
    failures: list[int] = field(default_factory=list)
    replica_ids: list[int] = field(default_factory=list)
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# replica plumbing


def _replica_task(task: tuple) -> tuple[int, Optional[np.ndarray], Optional[list], str]:
    params, spec, L_max, radius, seed, r, want_ep = task
    try:
        f = sample_field(spec, FieldRegion(params.d, 0, L_max, radius), seed, r)
        sw = sweep_levels(params, f, L_max, radius=radius)
        logs = sw.log_tilted()
        if not np.all(np.isfinite(logs)):
            raise FloatingPointError("non-finite bridge value")
        return r, logs, (sw.endpoints if want_ep else None), ""
    except Exception as e:  # noqa: BLE001  (carried per replica, judged in aggregate)
        return r, None, None, f"replica {r}: {type(e).__name__}: {e}"


@dataclass
class ReplicaBatch:
    ids: list[int]
    logs: np.ndarray  # (ok replicas, L_max) log tilted values
    endpoints: Optional[list[list[np.ndarray]]]  # normalized endpoint laws
    failures: list[int]


def run_replicas(params: ModelParams, spec: DisorderSpec, L_max: int, replicas: int, seed: int,
                 radius: int, endpoints: bool = False, workers: Optional[int] = None) -> ReplicaBatch:
    tasks = [(params, spec, L_max, radius, seed, r, endpoints) for r in range(replicas)]
    out = parallel_map(_replica_task, tasks, workers or None)
    bad = [(r, msg) for r, lg, _, msg in out if lg is None]
    if len(bad) > FAILURE_FRACTION * replicas:
        raise NumericalFailure([r for r, _ in bad], replicas, bad[0][1])
    good = [(r, lg, ep) for r, lg, ep, _ in out if lg is not None]
    return ReplicaBatch([g[0] for g in good], np.array([g[1] for g in good]),
                        [g[2] for g in good] if endpoints else None, [r for r, _ in bad])


def _radius(cfg: ExperimentConfig, L_max: int) -> int:
    return cfg.W or default_radius(cfg.d, L_max)


def _annealed_mode(cfg: ExperimentConfig) -> str:
    if cfg.annealed != "auto":
        return cfg.annealed
    return "oracle" if cfg.d == 1 else "monte_carlo"


def annealed_series_for(cfg: ExperimentConfig, params: ModelParams, batch: Optional[ReplicaBatch],
                        L_max: int) -> BridgeSeries:
    """Exact series in oracle mode, otherwise the replica mean of ``batch``."""
    if _annealed_mode(cfg) == "oracle":
        return build_annealed_series(params, cfg.spec(), L_max, mode="oracle")
    return series_from_log_samples(batch.logs[:, :L_max], params, cfg.spec())


# ---------------------------------------------------------------------------
# masses


@dataclass
class MassSummary:
    quenched: MassEstimate
    annealed: MassEstimate
    kappa: float

    @property
    def gap(self) -> float:
        return self.quenched.value - self.annealed.value

    @property
    def gap_ci(self) -> float:
        return math.hypot(self.quenched.ci_halfwidth, self.annealed.ci_halfwidth)

    @property
    def alpha_star(self) -> float:
        return self.kappa + self.quenched.value

    @property
    def beta_star(self) -> float:
        return self.kappa + self.annealed.value

    @property
    def jensen_ok(self) -> bool:
        return self.quenched.value >= self.annealed.value - 3 * self.gap_ci

    def as_dict(self) -> dict:
        return {
            "m_quenched": self.quenched.value, "m_quenched_ci": self.quenched.ci_halfwidth,
            "m_annealed": self.annealed.value, "m_annealed_ci": self.annealed.ci_halfwidth,
            "gap": self.gap, "gap_ci": self.gap_ci, "alpha_star": self.alpha_star,
            "alpha_star_ci": self.quenched.ci_halfwidth, "beta_star": self.beta_star,
            "beta_star_ci": self.annealed.ci_halfwidth, "kappa": self.kappa, "jensen_ok": self.jensen_ok,
            "annealed_method": self.annealed.method,
        }


def masses_from_batch(cfg: ExperimentConfig, params: ModelParams, batch: ReplicaBatch,
                      Ls: Sequence[int]) -> tuple[MassSummary, BridgeSeries]:
    Ls = np.asarray(sorted(Ls))
    mq = estimate_quenched_mass(batch.logs, Ls, solver_tol=cfg.tol)
    series = annealed_series_for(cfg, params, batch, int(Ls[-1]))
    ma = estimate_annealed_mass(series, L_min=int(Ls[0]), L_max=int(Ls[-1]), solver_tol=cfg.tol)
    return MassSummary(mq, ma, params.kappa), series


def estimate_masses(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    params = cfg.params()
    L_max = max(cfg.L_list)
    batch = run_replicas(params, cfg.spec(), L_max, cfg.replicas, cfg.seed, _radius(cfg, L_max), workers=cfg.workers)
    ms, series = masses_from_batch(cfg, params, batch, cfg.L_list)
    q_rows = []
    for L in sorted(cfg.L_list):
        v = -batch.logs[:, L - 1] / L
        q_rows.append({"L": L, "estimate": float(v.mean()), "stderr": float(v.std(ddof=1) / math.sqrt(len(v))),
                       "replicas": len(v)})
    return ExperimentResult(
        "masses", ms.as_dict(),
        {"quenched": (SERIES_COLUMNS, q_rows), "annealed_series": (SERIES_COLUMNS, series.rows())},
        batch.failures, batch.ids, time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# fractional moments


@dataclass
class Certificate:
    c: float
    ci_halfwidth: float
    mass_used: float
    normalization: str
    c_alternatives: dict[str, float]
    NL: int

    @property
    def certified(self) -> bool:
        return self.c < -3 * self.ci_halfwidth


def _frac_stat(logsNL: np.ndarray, log_ann: float, gamma: float, NL: int) -> float:
    x = gamma * (logsNL - log_ann)
    s = x.max()
    return (math.log(np.exp(x - s).mean()) + s) / (gamma * NL)


def certificate_from_batch(cfg: ExperimentConfig, params: ModelParams, batch: ReplicaBatch,
                           normalization: Optional[str] = None) -> Certificate:
    """c = (gamma N L)^-1 log mean_omega[B_hat_omega(NL)^gamma] with B_hat = exp(m NL) B_omega(NL).

    ``log_mean`` takes m = -(1/NL) log B(NL) from the annealed value at the same
    span, so that the deterministic renewal prefactor of B_hat cancels;
    ``slope_fit`` takes m from the fitted annealed mass. The CI is a replica
    jackknife (recomputing Monte Carlo annealed references) plus the worst-case
    effect of the solver tolerance.
    """
    norm = normalization or cfg.normalization
    NL = cfg.N * cfg.L
    g = cfg.gamma
    mode = _annealed_mode(cfg)
    series = annealed_series_for(cfg, params, batch, NL)
    logsNL = batch.logs[:, NL - 1]
    # slope fits need at least four levels
    L_min = max(1, min(4, NL - 3))
    fit = estimate_annealed_mass(series, L_min=L_min, L_max=NL, solver_tol=cfg.tol) if NL >= 4 else None
    mc = mode != "oracle"

    def log_ann(rows: np.ndarray, full_logs: np.ndarray) -> float:
        if norm == "log_mean":
            if mc:
                s = rows.max()
                return math.log(np.exp(rows - s).mean()) + s
            return float(series.log_values[NL - 1])
        if mc:
            sub = series_from_log_samples(full_logs, params, cfg.spec())
            return -estimate_annealed_mass(sub, L_min=L_min, L_max=NL).value * NL
        return -fit.value * NL

    full = batch.logs[:, :NL]
    c = _frac_stat(logsNL, log_ann(logsNL, full), g, NL)
    n = len(logsNL)
    jk = np.array([
        _frac_stat(np.delete(logsNL, i), log_ann(np.delete(logsNL, i), np.delete(full, i, axis=0)), g, NL)
        for i in range(n)
    ])
    se = math.sqrt((n - 1) / n * float(((jk - jk.mean()) ** 2).sum()))
    ci = Z95 * se + 2 * cfg.tol / NL
    alts = {}
    if fit is not None:
        for tag, m in (("slope_fit", fit.value), ("slope_fit_low", fit.value - fit.ci_halfwidth),
                       ("slope_fit_high", fit.value + fit.ci_halfwidth)):
            alts[tag] = _frac_stat(logsNL, -m * NL, g, NL)
    alts["log_mean"] = _frac_stat(logsNL, float(series.log_values[NL - 1]), g, NL)
    mass_used = -log_ann(logsNL, full) / NL
    return Certificate(c, ci, mass_used, norm, alts, NL)


def fractional_moment_certificate(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    params = cfg.params()
    NL = cfg.N * cfg.L
    batch = run_replicas(params, cfg.spec(), NL, cfg.replicas, cfg.seed, _radius(cfg, NL), workers=cfg.workers)
    cert = certificate_from_batch(cfg, params, batch)
    summary = {"c": cert.c, "ci_halfwidth": cert.ci_halfwidth, "certified": cert.certified,
               "mass_used": cert.mass_used, "normalization": cert.normalization, "NL": NL,
               "gamma": cfg.gamma, **{f"c_{k}": v for k, v in cert.c_alternatives.items()}}
    rows = [{"replica": r, "log_bridge": float(lg[NL - 1])} for r, lg in zip(batch.ids, batch.logs)]
    return ExperimentResult("fractional", summary, {"replicas": (("replica", "log_bridge"), rows)},
                            batch.failures, batch.ids, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# localization


LOCALIZE_COLUMNS = ("L", "replicas", "max_atom_mean", "max_atom_q10", "max_atom_median", "max_atom_q90",
                    "participation_mean", "participation_median", "entropy_mean", "entropy_median")


def localization_rows(batch: ReplicaBatch, Ls: Sequence[int]) -> list[dict]:
    rows = []
    for L in sorted(Ls):
        stats = [measure_from_weights(eps[L - 1]) for eps in batch.endpoints]
        ma = np.array([s.max_atom for s in stats])
        pr = np.array([s.participation_ratio for s in stats])
        en = np.array([s.entropy for s in stats])
        q10, q50, q90 = np.quantile(ma, [0.1, 0.5, 0.9])
        rows.append({"L": int(L), "replicas": len(ma), "max_atom_mean": float(ma.mean()), "max_atom_q10": float(q10),
                     "max_atom_median": float(q50), "max_atom_q90": float(q90),
                     "participation_mean": float(pr.mean()), "participation_median": float(np.median(pr)),
                     "entropy_mean": float(en.mean()), "entropy_median": float(np.median(en))})
    return rows


def decay_exponent(Ls: Sequence[int], values: Sequence[float]) -> float:
    """Slope of log(values) against log(L)."""
    return float(np.polyfit(np.log(np.asarray(Ls, float)), np.log(np.asarray(values, float)), 1)[0])


def localization_scan(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    params = cfg.params()
    L_max = max(cfg.L_list)
    batch = run_replicas(params, cfg.spec(), L_max, cfg.replicas, cfg.seed, _radius(cfg, L_max),
                         endpoints=True, workers=cfg.workers)
    rows = localization_rows(batch, cfg.L_list)
    med = [r["max_atom_median"] for r in rows]
    summary = {"median_max_atom": {r["L"]: r["max_atom_median"] for r in rows},
               "min_median_max_atom": min(med)}
    if len(rows) >= 2:
        summary["decay_exponent"] = decay_exponent([r["L"] for r in rows], med)
    return ExperimentResult("localize", summary, {"localization": (LOCALIZE_COLUMNS, rows)},
                            batch.failures, batch.ids, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# beta sweep


def sweep_precondition(spec: DisorderSpec, d: int) -> tuple[bool, str]:
    """essinf 0 and an atom at 0 below the site-percolation threshold."""
    pz = spec.prob_zero()
    pd = PERCOLATION_THRESHOLDS.get(d)
    if spec.essinf != 0:
        return False, "essential infimum of omega is not 0"
    if pz <= 0:
        return False, "omega has no atom at 0"
    if pd is not None and pz >= pd:
        return False, f"P(omega = 0) = {pz:.4f} is not below p_{d} = {pd}"
    return True, "ok"


def beta_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    spec = cfg.spec()
    ok, why = sweep_precondition(spec, cfg.d)
    if not ok:
        warnings.warn(f"linear-growth precondition fails: {why}", PreconditionWarning, stacklevel=2)
    L_max = max(cfg.L_list)
    rows, failures, ids = [], [], []
    for beta in cfg.beta_grid:
        params = cfg.params(beta)
        batch = run_replicas(params, spec, L_max, cfg.replicas, cfg.seed, _radius(cfg, L_max), workers=cfg.workers)
        ms, _ = masses_from_batch(cfg, params, batch, cfg.L_list)
        failures += batch.failures
        ids = batch.ids
        phi = float(phi_uncentered(beta, spec))
        rows.append({"beta": beta, "alpha_star": ms.alpha_star, "beta_star": ms.beta_star, "phi_beta": phi,
                     "alpha_star_ci": ms.quenched.ci_halfwidth, "beta_star_ci": ms.annealed.ci_halfwidth,
                     "beta_star_over_beta": ms.beta_star / beta, "beta_star_over_beta_ci": ms.annealed.ci_halfwidth / beta,
                     "alpha_star_over_beta": ms.alpha_star / beta,
                     "annealed_bound_constant": ms.beta_star / (cfg.lam + phi)})
    a, b = rows[-2], rows[-1]
    summary = {
        "precondition_ok": ok, "precondition": why,
        "beta_star_ratio_drop": a["beta_star_over_beta"] - b["beta_star_over_beta"],
        "beta_star_ratio_drop_ci": math.hypot(a["beta_star_over_beta_ci"], b["beta_star_over_beta_ci"]),
        "alpha_star_growth": b["alpha_star"] / a["alpha_star"],
    }
    summary["beta_star_ratio_decreasing"] = summary["beta_star_ratio_drop"] > summary["beta_star_ratio_drop_ci"]
    return ExperimentResult("sweep", summary, {"sweep": (SWEEP_COLUMNS, rows)}, failures, ids,
                            time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# coarse-graining observables


@dataclass(frozen=True)
class SkeletonBoxes:
    """Skeleton geometry for a block of span L at skeleton vertex v = (v1, v_perp)."""

    d: int
    L: int
    C1: float
    C3: float

    def landing_box(self, v: Sequence[int]) -> tuple[int, list[range]]:
        """I_v: level v1 L and transverse 0 <= x_j - v_j C1 sqrt(L) < C1 sqrt(L)."""
        s = self.C1 * math.sqrt(self.L)
        return v[0] * self.L, [range(math.ceil(vj * s), math.ceil((vj + 1) * s)) for vj in v[1:]]

    def block(self, v: Sequence[int]) -> tuple[range, list[range]]:
        """J_v: levels v1 L .. v1 L + L - 1 and |x_j - v_j C1 sqrt(L)| < C3 sqrt(L)."""
        s, r = self.C1 * math.sqrt(self.L), self.C3 * math.sqrt(self.L)
        trans = []
        for vj in v[1:]:
            c = vj * s
            trans.append(range(math.floor(c - r) + 1, math.ceil(c + r)))
        return range(v[0] * self.L, v[0] * self.L + self.L), trans

    def j0_radius(self) -> int:
        """Largest integer |x| with |x| < C3 sqrt(L)."""
        return math.ceil(self.C3 * math.sqrt(self.L)) - 1

    def j0_size(self) -> int:
        return self.L * (2 * self.j0_radius() + 1) ** (self.d - 1)


def delta_L(L: int) -> float:
    return -(L ** -0.75)


def v_kernel(d: int, L: int, C4: float, radius: int) -> np.ndarray:
    """V over displacements (dz1, dz_perp) in [-(L-1), L-1] x [-2r, 2r]^(d-1), zero at the origin."""
    dz1 = np.arange(-(L - 1), L)
    dperp = np.arange(-2 * radius, 2 * radius + 1)
    grids = np.meshgrid(dz1, *([dperp] * (d - 1)), indexing="ij")
    a1 = np.abs(grids[0]).astype(float)
    perp = np.sqrt(sum(g.astype(float) ** 2 for g in grids[1:]))
    K = (perp < C4 * np.sqrt(a1)) / (a1 + 1.0) / (L * math.sqrt(math.log(L)))
    K[(L - 1,) + (2 * radius,) * (d - 1)] = 0.0
    return K


def sum_v_squared(d: int, L: int, C4: float, radius: int) -> float:
    """sum_{y,z in J0} V_{y,z}^2 by counting pairs per displacement."""
    K = v_kernel(d, L, C4, radius)
    n = [L] + [2 * radius + 1] * (d - 1)
    counts = np.ones(1)
    for j, nj in enumerate(n):
        c = nj - np.abs(np.arange(-(nj - 1), nj))
        counts = np.multiply.outer(counts, c) if j else c.astype(float)
    return float((K**2 * counts).sum())


def g3_statistic(w: np.ndarray, kernel: np.ndarray) -> float:
    """sum_{y, z} V(y - z) w_y w_z for a kernel centered in an array of odd side lengths."""
    return float((w * fftconvolve(w, kernel, mode="same")).sum())


def _g_task(task: tuple) -> tuple[float, float]:
    spec, d, L, radius, seed, r, C4, want_g3 = task
    f = sample_field(spec, FieldRegion(d, 0, L - 1, radius), seed, r)
    w = f.centered_values()
    g2 = delta_L(L) * math.fsum(w.ravel())
    g3 = math.nan
    if want_g3:
        g3 = g3_statistic(w, v_kernel(d, L, C4, radius))
    return g2, g3


COARSE_COLUMNS = ("K2", "threshold", "p_hat_G2", "se_G2", "bound_G2", "chebyshev_G2", "p_hat_G3", "se_G3", "bound_G3")


def coarse_grain_observables(cfg: ExperimentConfig) -> ExperimentResult:
    """Tail frequencies of G2 = delta_L sum_{J0} centered omega and G3 = sum V centered products.

    ``bound_G2`` = 2 C3 Var(omega) e^{-2 K2}; ``chebyshev_G2`` uses the exact
    delta_L^2 |J0|. ``bound_G3`` = 2 Var^2 sum V^2 e^{-2 K2} (ordered pairs).
    """
    if cfg.d not in (2, 3):
        raise ValueError("coarse-graining observables are defined for d in {2, 3}")
    t0 = time.perf_counter()
    spec = cfg.spec()
    L = cfg.L
    box = SkeletonBoxes(cfg.d, L, cfg.C1, cfg.C3)
    r = box.j0_radius()
    want_g3 = cfg.d == 3
    tasks = [(spec, cfg.d, L, r, cfg.seed, i, cfg.C4, want_g3) for i in range(cfg.replicas)]
    out = np.array(parallel_map(_g_task, tasks, cfg.workers or None))
    g2, g3 = out[:, 0], out[:, 1]
    n = len(g2)
    var = spec.variance
    size = box.j0_size()
    sv2 = sum_v_squared(cfg.d, L, cfg.C4, r) if want_g3 else math.nan
    rows = []
    for K2 in cfg.K2:
        thr = math.exp(K2)
        p2 = float((g2 > thr).mean())
        p3 = float((g3 > thr).mean()) if want_g3 else math.nan
        rows.append({
            "K2": K2, "threshold": thr, "p_hat_G2": p2, "se_G2": math.sqrt(p2 * (1 - p2) / n),
            "bound_G2": 2 * cfg.C3 * var * math.exp(-2 * K2),
            "chebyshev_G2": delta_L(L) ** 2 * size * var * math.exp(-2 * K2),
            "p_hat_G3": p3, "se_G3": math.sqrt(p3 * (1 - p3) / n) if want_g3 else math.nan,
            "bound_G3": 2 * var**2 * sv2 * math.exp(-2 * K2) if want_g3 else math.nan,
        })
    summary = {
        "J0_size": size, "delta_L": delta_L(L), "delta2_J0": delta_L(L) ** 2 * size,
        "mean_G2": float(g2.mean()), "mean_G2_ci": Z95 * float(g2.std(ddof=1)) / math.sqrt(n),
    }
    tag = "G3" if want_g3 else "G2"
    summary["bounds_respected"] = all(r_[f"p_hat_{tag}"] <= r_[f"bound_{tag}"] + 3 * r_[f"se_{tag}"] for r_ in rows)
    if want_g3:
        summary.update({"sum_V2": sv2, "C_fit": sv2 / (cfg.C3**2 * cfg.C4**2), "mean_G3": float(g3.mean())})
    return ExperimentResult("coarse", summary, {"coarse": (COARSE_COLUMNS, rows)}, [], list(range(cfg.replicas)),
                            time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# renewal and single solves


RENEWAL_COLUMNS = ("L", "irreducible", "stderr", "normalized")


def renewal_analysis(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    params = cfg.params()
    spec = cfg.spec()
    mode = _annealed_mode(cfg)
    if mode == "oracle":
        series = build_annealed_series(params, spec, cfg.L_max, mode="oracle")
        ids: list[int] = []
    else:
        series = build_annealed_series(params, spec, cfg.L_max, cfg.replicas, cfg.seed, mode="monte_carlo",
                                       radius=cfg.W or None, workers=cfg.workers or None)
        ids = list(range(cfg.replicas))
    mass = estimate_annealed_mass(series, solver_tol=cfg.tol)
    table = deconvolve_irreducible(series, mass)
    mu0 = compute_mu0(cfg.d, cfg.lam)
    summary = {
        "provenance": series.provenance, "mass": mass.value, "mass_ci": mass.ci_halfwidth,
        "residual": table.residual, "mean_span": table.mean, "renewal_product": renewal_theorem_product(series, table),
        "mu0": mu0, "sandwich_constant": sandwich_constant(mu0), "sandwich_holds": mass.sandwich_holds,
        "noise_flags": table.noise_flags, **table.sensitivity,
    }
    try:
        gap = mass_gap_fit(table)
        summary.update({"gap_rate": gap.rho, "gap_rate_ci": gap.ci_halfwidth})
    except ValueError as e:
        summary["gap_rate_error"] = str(e)
    tables = {"series": (SERIES_COLUMNS, series.rows()), "renewal": (RENEWAL_COLUMNS, table.rows())}
    if cfg.d == 1 or cfg.L_cut <= 3:
        smp = sample_markov_renewal(params, spec, cfg.L_cut, cfg.n_blocks, cfg.seed, mass=mass.value)
        summary.update({"block_support_mass": smp.law.support_mass, "sampled_mean_span": float(smp.spans.mean())})
        try:
            tail = survival_tail_fit(smp.durations)
            summary.update({"duration_tail_slope": tail.slope, "duration_tail_r2": tail.r_squared})
        except ValueError as e:
            summary["duration_tail_error"] = str(e)
    return ExperimentResult("renewal", summary, tables, [], ids, time.perf_counter() - t0)


def single_solve(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    params = cfg.params()
    L = cfg.L
    W = _radius(cfg, L)
    depth = cfg.D or None
    lo = -cfg.D if cfg.D else 0
    f = sample_field(cfg.spec(), FieldRegion(cfg.d, lo, L, W), cfg.seed, cfg.replica)
    res = solve_forward(SlabSystem(params, f, L, radius=W, depth=depth, tol=cfg.tol))
    meas = endpoint_measure(res)
    summary = {"total": res.total, "tilted_bridge": res.tilted_bridge, "log_total": res.log_total,
               "iterations": res.iterations, "residual": res.residual, "truncation_flux": res.truncation_flux,
               "max_atom": meas.max_atom, "participation_ratio": meas.participation_ratio, "entropy": meas.entropy}
    rows = [{"site": " ".join(map(str, s)) or "0", "value": float(v)}
            for s, v in zip(res.endpoint_sites(), np.ravel(res.endpoint_values))]
    return ExperimentResult("solve", summary, {"endpoints": (("site", "value"), rows)}, [], [cfg.replica],
                            time.perf_counter() - t0)


def oracle_report(d: int, L: int, N_max: int, lam: float = 0.5, beta: float = 0.5, p: float = 0.5,
                  seed: int = 0) -> dict:
    """Exact enumeration values with truncation bounds for a small instance."""
    spec = DisorderSpec.bernoulli(p, 1.0)
    params = ModelParams.for_spec(d, lam, beta, spec)
    budget = EnumerationBudget(N_max)
    reach = N_max // 2 + 1
    f = sample_field(spec, FieldRegion(d, -reach, L, max(1, reach)), seed)
    qb = enumerate_quenched(f, params, L, True, budget)
    qf = enumerate_quenched(f, params, L, False, budget)
    ab = enumerate_annealed(params, spec, L, True, budget)
    ai = enumerate_irreducible_annealed(params, spec, L, budget)
    return {
        "d": d, "L": L, "N_max": N_max, "lam": lam, "beta": beta, "p": p, "seed": seed,
        "truncation_bound": budget.truncation_bound(lam),
        "quenched_bridge": qb.value, "quenched_bridge_tilted": qb.tilted,
        "quenched_free": qf.value, "annealed_bridge": ab.value, "annealed_bridge_tilted": ab.tilted,
        "annealed_irreducible": ai.value, "annealed_bound": ab.bound,
        "phi_bar_prime_beta": float(phi_bar_prime(beta, spec)),
    }
