"""Model parameters, disorder laws and the annealed path weight.

Symbol table (code name -> meaning):

    lam            killing rate per step
    beta           inverse temperature
    kappa          tilt solving log((cosh k + d - 1)/d) = lam + beta*E[omega]
    phi(t)         -log E[exp(-t*omega)]
    phi_bar(t)     -log E[exp(-t*(omega - E omega))] = phi(t) - t*E[omega]
    Phi_bar        sum_x phi_bar(beta * local_time(x)), the annealed potential
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

Site = tuple[int, ...]


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


def solve_kappa(d: int, drift_exponent: float) -> float:
    """Tilt kappa > 0 with log((cosh(kappa) + d - 1)/d) = drift_exponent.

    Closed form ``arccosh(d*exp(a) - (d - 1))``. For tiny exponents the
    argument of arccosh is within rounding of 1, so the series
    ``cosh(k) - 1 = d*expm1(a)`` is inverted through ``2*asinh(sqrt(y/2))``.
    """
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    if not drift_exponent > 0:
        raise DomainError(f"drift exponent must be positive, got {drift_exponent}")
    y = d * math.expm1(drift_exponent)  # cosh(kappa) - 1
    return 2.0 * math.asinh(math.sqrt(y / 2.0))


def solve_kappa_bisect(d: int, drift_exponent: float, tol: float = 1e-15) -> float:
    """Same root as :func:`solve_kappa`, found by bisection on the tilt equation."""
    if not drift_exponent > 0:
        raise DomainError(f"drift exponent must be positive, got {drift_exponent}")

    def g(k: float) -> float:
        return math.log((math.cosh(k) + d - 1) / d) - drift_exponent

    lo, hi = 0.0, 1.0
    while g(hi) < 0:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DisorderSpec:
    """Law of a single site variable omega >= 0.

    ``law`` is one of ``"bernoulli"`` (P(omega=a)=p, else 0), ``"exponential"``,
    ``"gamma"`` or ``"point_masses"``. Degenerate laws are rejected unless
    ``allow_degenerate`` is set; they exist for tests only.
    """

    law: str
    params: tuple[tuple[str, object], ...]
    allow_degenerate: bool = False
    mean: float = field(init=False)
    second_moment: float = field(init=False)

    def __post_init__(self) -> None:
        p = dict(self.params)
        law = self.law
        if law == "bernoulli":
            prob, a = float(p["p"]), float(p["a"])
            if not 0.0 <= prob <= 1.0 or a < 0:
                raise DomainError("bernoulli needs 0 <= p <= 1 and a >= 0")
            degenerate = prob in (0.0, 1.0) or a == 0.0
            mean, m2 = prob * a, prob * a * a
        elif law == "exponential":
            rate = float(p["rate"])
            if not rate > 0:
                raise DomainError("exponential rate must be positive")
            degenerate = False
            mean, m2 = 1.0 / rate, 2.0 / rate**2
        elif law == "gamma":
            k, theta = float(p["shape"]), float(p["scale"])
            if not (k > 0 and theta > 0):
                raise DomainError("gamma shape and scale must be positive")
            degenerate = False
            mean, m2 = k * theta, k * (k + 1) * theta**2
        elif law == "point_masses":
            vals = np.asarray(p["values"], dtype=float)
            probs = np.asarray(p["probs"], dtype=float)
            if vals.shape != probs.shape or vals.ndim != 1 or vals.size == 0:
                raise DomainError("values and probs must be equal-length sequences")
            if np.any(vals < 0) or np.any(probs < 0):
                raise DomainError("point masses need nonnegative values and probabilities")
            if abs(probs.sum() - 1.0) > 1e-12:
                raise DomainError(f"probabilities sum to {probs.sum()!r}, not 1")
            degenerate = np.unique(vals[probs > 0]).size < 2
            mean, m2 = float(vals @ probs), float(vals**2 @ probs)
        else:
            raise DomainError(f"unknown disorder law {law!r}")
        if degenerate and not self.allow_degenerate:
            raise DomainError(f"{law} law {p} is concentrated on a single point")
        object.__setattr__(self, "mean", float(mean))
        object.__setattr__(self, "second_moment", float(m2))

    # constructors
    @classmethod
    def bernoulli(cls, p: float, a: float = 1.0, allow_degenerate: bool = False) -> "DisorderSpec":
        return cls("bernoulli", (("p", float(p)), ("a", float(a))), allow_degenerate)

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "DisorderSpec":
        return cls("exponential", (("rate", float(rate)),))

    @classmethod
    def gamma(cls, shape: float, scale: float = 1.0) -> "DisorderSpec":
        return cls("gamma", (("shape", float(shape)), ("scale", float(scale))))

    @classmethod
    def point_masses(
        cls, values: Sequence[float], probs: Sequence[float], allow_degenerate: bool = False
    ) -> "DisorderSpec":
        return cls(
            "point_masses",
            (("values", tuple(float(v) for v in values)), ("probs", tuple(float(q) for q in probs))),
            allow_degenerate,
        )

    @classmethod
    def zero(cls) -> "DisorderSpec":
        """omega == 0; test-only."""
        return cls.bernoulli(0.0, 1.0, allow_degenerate=True)

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean**2

    @property
    def essinf(self) -> float:
        if self.law == "point_masses":
            p = dict(self.params)
            vals = np.asarray(p["values"])
            return float(vals[np.asarray(p["probs"]) > 0].min())
        if self.law == "bernoulli":
            p = dict(self.params)
            return float(p["a"]) if p["p"] == 1.0 else 0.0
        return 0.0

    def prob_zero(self) -> float:
        """P(omega == 0)."""
        p = dict(self.params)
        if self.law == "bernoulli":
            return 1.0 - float(p["p"]) if float(p["a"]) > 0 else 1.0
        if self.law == "point_masses":
            vals, probs = np.asarray(p["values"]), np.asarray(p["probs"])
            return float(probs[vals == 0].sum())
        return 0.0

    def describe(self) -> dict:
        return {"law": self.law, **{k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params}}

    @classmethod
    def from_description(cls, desc: Mapping) -> "DisorderSpec":
        desc = dict(desc)
        law = desc.pop("law")
        allow = bool(desc.pop("allow_degenerate", False))
        if law == "bernoulli":
            return cls.bernoulli(desc["p"], desc["a"], allow)
        if law == "exponential":
            return cls.exponential(desc["rate"])
        if law == "gamma":
            return cls.gamma(desc["shape"], desc["scale"])
        if law == "point_masses":
            return cls.point_masses(desc["values"], desc["probs"], allow)
        raise DomainError(f"unknown disorder law {law!r}")

    # sampling by inverse CDF; u uniform in [0, 1)
    def quantile(self, u: np.ndarray) -> np.ndarray:
        p = dict(self.params)
        u = np.asarray(u, dtype=float)
        if self.law == "bernoulli":
            return np.where(u < float(p["p"]), float(p["a"]), 0.0)
        if self.law == "exponential":
            return -np.log1p(-u) / float(p["rate"])
        if self.law == "gamma":
            from scipy.stats import gamma as _gamma

            return _gamma.ppf(u, float(p["shape"]), scale=float(p["scale"]))
        vals = np.asarray(p["values"], dtype=float)
        cdf = np.cumsum(np.asarray(p["probs"], dtype=float))
        cdf[-1] = 1.0
        return vals[np.searchsorted(cdf, u, side="right")]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.quantile(rng.random(size))


def phi_uncentered(t, spec: DisorderSpec):
    """phi(t) = -log E[exp(-t*omega)], closed form per law; vectorized in t."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("phi is evaluated at t >= 0 only")
    p = dict(spec.params)
    if spec.law == "bernoulli":
        prob, a = float(p["p"]), float(p["a"])
        if prob == 1.0:
            out = t * a
        else:
            # -log((1-p) + p e^{-ta}) = -log(1-p) - log1p(p/(1-p) e^{-ta})
            out = -math.log1p(-prob) - np.log1p(prob / (1.0 - prob) * np.exp(-t * a))
    elif spec.law == "exponential":
        out = np.log1p(t / float(p["rate"]))
    elif spec.law == "gamma":
        out = float(p["shape"]) * np.log1p(t * float(p["scale"]))
    else:
        vals = np.asarray(p["values"], dtype=float)
        probs = np.asarray(p["probs"], dtype=float)
        keep = probs > 0
        logp = np.log(probs[keep])
        out = -logsumexp(logp[None, :] - np.multiply.outer(t.ravel(), vals[keep]), axis=1).reshape(t.shape)
    out = np.where(t == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def phi_bar(t, spec: DisorderSpec):
    """Centered log-moment generating function -log E[exp(-t*(omega - E omega))]."""
    t_arr = np.asarray(t, dtype=float)
    out = np.asarray(phi_uncentered(t_arr, spec)) - t_arr * spec.mean
    return float(out) if out.ndim == 0 else out


def phi_bar_prime(t, spec: DisorderSpec):
    """Derivative of phi_bar: E_t[omega] - E[omega] under the tilted law, always <= 0."""
    t = np.asarray(t, dtype=float)
    p = dict(spec.params)
    if spec.law == "bernoulli":
        prob, a = float(p["p"]), float(p["a"])
        e = prob * np.exp(-t * a)
        tilted_mean = a * e / ((1.0 - prob) + e)
    elif spec.law == "exponential":
        tilted_mean = 1.0 / (float(p["rate"]) + t)
    elif spec.law == "gamma":
        tilted_mean = float(p["shape"]) * float(p["scale"]) / (1.0 + t * float(p["scale"]))
    else:
        vals = np.asarray(p["values"], dtype=float)
        probs = np.asarray(p["probs"], dtype=float)
        logw = np.log(np.where(probs > 0, probs, 1e-300))[None, :] - np.multiply.outer(t.ravel(), vals)
        wts = np.exp(logw - logw.max(axis=1, keepdims=True))
        tilted_mean = ((wts @ vals) / wts.sum(axis=1)).reshape(t.shape)
    out = tilted_mean - spec.mean
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ModelParams:
    """One polymer model: dimension, killing rate, inverse temperature and mean disorder.

    ``kappa`` is derived from ``lam + beta * mean_omega``; pass the disorder mean
    via :meth:`for_spec` to keep the two consistent.
    """

    d: int
    lam: float
    beta: float
    mean_omega: float = 0.0
    kappa: float = field(init=False)

    def __post_init__(self) -> None:
        if self.d < 1:
            raise DomainError(f"d must be >= 1, got {self.d}")
        if not self.lam > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if self.beta < 0:
            raise DomainError(f"beta must be nonnegative, got {self.beta}")
        object.__setattr__(self, "kappa", solve_kappa(self.d, self.drift_exponent))

    @classmethod
    def for_spec(cls, d: int, lam: float, beta: float, spec: DisorderSpec) -> "ModelParams":
        return cls(d, lam, beta, spec.mean)

    @property
    def drift_exponent(self) -> float:
        return self.lam + self.beta * self.mean_omega

    def with_beta(self, beta: float) -> "ModelParams":
        return ModelParams(self.d, self.lam, beta, self.mean_omega)


def tilted_kernel(params: ModelParams) -> dict[Site, float]:
    """Transition probabilities of the walk tilted by kappa toward e_1."""
    d, k = params.d, params.kappa
    norm = 2.0 * (math.cosh(k) + d - 1)
    table: dict[Site, float] = {}
    for axis in range(d):
        for sign in (1, -1):
            step = tuple(sign if j == axis else 0 for j in range(d))
            table[step] = math.exp(k * sign) / norm if axis == 0 else 1.0 / norm
    return table


def unit_steps(d: int) -> list[Site]:
    return [tuple(s if j == axis else 0 for j in range(d)) for axis in range(d) for s in (1, -1)]


@dataclass(frozen=True)
class LocalTimeProfile:
    """Visit counts of a path segment; ``total`` is the number of time steps covered."""

    counts: Mapping[Site, int]
    total: int

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.counts.values()):
            raise DomainError("local times must be nonnegative")
        if sum(self.counts.values()) != self.total:
            raise DomainError("total must equal the sum of the counts")

    @classmethod
    def from_path(cls, path: Sequence[Site], start: int = 0, stop: int | None = None) -> "LocalTimeProfile":
        """Local time over times ``start <= n < stop`` (default: the whole path but the last point)."""
        stop = len(path) - 1 if stop is None else stop
        c = Counter(tuple(x) for x in path[start:stop])
        return cls(dict(c), stop - start)

    @classmethod
    def from_times(cls, path: Sequence[Site], times: Iterable[int]) -> "LocalTimeProfile":
        times = list(times)
        c = Counter(tuple(path[n]) for n in times)
        return cls(dict(c), len(times))

    def __add__(self, other: "LocalTimeProfile") -> "LocalTimeProfile":
        c = Counter(self.counts)
        c.update(other.counts)
        return LocalTimeProfile(dict(c), self.total + other.total)


def annealed_potential(profile: LocalTimeProfile, beta: float, spec: DisorderSpec) -> float:
    """Phi_bar = sum_x phi_bar(beta * l(x))."""
    if not profile.counts:
        return 0.0
    ell = np.fromiter(profile.counts.values(), dtype=float)
    return math.fsum(np.atleast_1d(phi_bar(beta * ell, spec)))


def annealed_potential_uncentered(profile: LocalTimeProfile, beta: float, spec: DisorderSpec) -> float:
    if not profile.counts:
        return 0.0
    ell = np.fromiter(profile.counts.values(), dtype=float)
    return math.fsum(np.atleast_1d(phi_uncentered(beta * ell, spec)))


def annealed_weight(profile: LocalTimeProfile, beta: float, spec: DisorderSpec) -> float:
    """E over disorder of exp(-beta * sum_x omega_bar(x) l(x)) = exp(-Phi_bar)."""
    return math.exp(-annealed_potential(profile, beta, spec))
