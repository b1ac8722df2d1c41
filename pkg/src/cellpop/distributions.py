"""Mutant-count laws for exponentially growing cell populations.

The classic law is compound Poisson: a Poisson number of mutant clones,
each contributing an independent number of cells with mass 1/(j(j+1)).
The generalised family replaces fixed clone-size laws by birth-death
processes observed at exponentially distributed seeding ages, which is
what a clone seeded during exponential growth looks like at the time the
population is sampled.

All samplers take an explicit ``numpy.random.Generator``; there is no
hidden global state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConvergenceError",
    "LdParams",
    "GenLdParams",
    "BdTimeLaw",
    "sample_y",
    "sample_ld",
    "ld_pgf",
    "ld_pmf",
    "ld_tail_asymptote",
    "bd_time_law_sample",
    "sample_gen_ld",
    "gen_ld_pgf",
    "hyp2f1_special",
]

HYP2F1_TOL = 1e-12
HYP2F1_MAX_TERMS = 10**6


class ConvergenceError(RuntimeError):
    """A series evaluation did not reach tolerance within its term budget."""


@dataclass(frozen=True)
class LdParams:
    """Parameter of the classic mutant-count law: the mean clone number."""

    c: float

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c >= 0):
            raise ValueError(f"c must be finite and nonnegative, got {self.c}")


@dataclass(frozen=True)
class GenLdParams:
    """Parameters of the generalised mutant-count law.

    lam : scale of the exponential clone-seeding ages (rate lam, mean 1/lam)
    a   : clone birth rate
    b   : clone death rate
    c   : mean number of clones (Poisson)
    """

    lam: float
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be finite and positive, got {self.lam}")
        for name in ("a", "b", "c"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class BdTimeLaw:
    """A birth-death process started from one cell, observed at elapsed time t."""

    birth: float
    death: float
    t: float

    def __post_init__(self):
        for name in ("birth", "death", "t"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def sample_y(rng: np.random.Generator, size: int | None = None):
    """Draw clone sizes with mass 1/(j(j+1)) on {1, 2, ...}.

    Uses inversion of the tail P[Y >= j] = 1/j: Y = floor(1/U) for U
    uniform on (0, 1].
    """
    u = 1.0 - rng.random(size)  # uniform on (0, 1]
    y = np.floor(1.0 / u)
    if size is None:
        return int(y)
    return y.astype(np.int64)


def sample_ld(p: LdParams, rng: np.random.Generator, size: int | None = None):
    """Draw mutant counts: a Poisson(c) number of clones, each sized by sample_y."""
    if size is None:
        k = int(rng.poisson(p.c))
        if k == 0:
            return 0
        return int(sample_y(rng, k).sum())
    k = rng.poisson(p.c, size)
    total = int(k.sum())
    out = np.zeros(size, dtype=np.int64)
    if total == 0:
        return out
    ys = sample_y(rng, total)
    owner = np.repeat(np.arange(size), k)
    np.add.at(out, owner, ys)
    return out


def ld_pgf(p: LdParams, z: float) -> float:
    """Probability generating function of the mutant-count law.

    E[z^B] = (1-z)^(c(1/z - 1)) on (0, 1), with the continuous limits
    exp(-c) at z = 0 and 1 at z = 1.
    """
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"z must lie in [0, 1], got {z}")
    if z == 0.0:
        return math.exp(-p.c)
    if z == 1.0:
        return 1.0
    return math.exp(p.c * (1.0 / z - 1.0) * math.log1p(-z))


def ld_pmf(p: LdParams, m_max: int) -> np.ndarray:
    """Exact mass function on {0, ..., m_max} by compound-Poisson recursion.

    P[B=0] = exp(-c) and  P[B=m] = (c/m) * sum_{j=1}^{m} j q_j P[B=m-j]
    with clone-size mass q_j = 1/(j(j+1)), so j q_j = 1/(j+1).
    """
    if m_max < 0:
        raise ValueError(f"m_max must be nonnegative, got {m_max}")
    pmf = np.zeros(m_max + 1)
    pmf[0] = math.exp(-p.c)
    if p.c == 0.0 or m_max == 0:
        return pmf
    w = 1.0 / np.arange(2.0, m_max + 2.0)  # w[j-1] = j*q_j
    for m in range(1, m_max + 1):
        pmf[m] = (p.c / m) * float(np.dot(w[:m], pmf[m - 1 :: -1]))
    return pmf


def ld_tail_asymptote(p: LdParams, m: int) -> float:
    """Large-m approximation c/m of the tail P[B >= m].

    The exact tail satisfies m * P[B >= m] -> c as m grows.
    """
    if m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    return p.c / m


def _bd_zero_and_geom(birth: float, death: float, t):
    """Extinction mass and geometric parameter of the time-t birth-death law.

    Started from one cell, P[Y(t)=0] equals the first returned value and,
    conditional on survival, Y(t) is geometric on {1,2,...} with
    P[Y(t)=k] proportional to beta_t^(k-1), beta_t the second value.
    Accepts a scalar or array t.
    """
    t = np.asarray(t, dtype=float)
    if birth == death:
        x = birth * t
        frac = x / (1.0 + x)
        return frac, frac
    lam = birth - death
    if lam > 0:
        e = np.exp(-lam * t)  # in (0, 1]
        denom = birth - death * e
        return death * (1.0 - e) / denom, birth * (1.0 - e) / denom
    e = np.exp(lam * t)
    denom = death - birth * e
    return death * (1.0 - e) / denom, birth * (1.0 - e) / denom


def bd_time_law_sample(law: BdTimeLaw, rng: np.random.Generator, size: int | None = None):
    """Draw the population size of a birth-death process at time t, started at 1.

    With birth = death = 0 the size is deterministically 1.
    """
    a_t, b_t = _bd_zero_and_geom(law.birth, law.death, law.t)
    a_t = float(a_t)
    b_t = float(b_t)
    if size is None:
        if a_t > 0.0 and rng.random() < a_t:
            return 0
        return int(rng.geometric(1.0 - b_t))
    extinct = rng.random(size) < a_t
    alive = rng.geometric(1.0 - b_t, size)
    return np.where(extinct, 0, alive).astype(np.int64)


def sample_gen_ld(p: GenLdParams, rng: np.random.Generator, size: int | None = None):
    """Draw generalised mutant counts.

    A Poisson(c) number of clones is seeded; clone k has an exponential
    age xi_k with rate lam and contributes a birth-death population of
    rates (a, b) run for time xi_k. Returns the summed contribution.
    """
    scalar = size is None
    n = 1 if scalar else size
    k = rng.poisson(p.c, n)
    total = int(k.sum())
    out = np.zeros(n, dtype=np.int64)
    if total > 0:
        xi = rng.exponential(1.0 / p.lam, total)
        a_t, b_t = _bd_zero_and_geom(p.a, p.b, xi)
        extinct = rng.random(total) < a_t
        sizes = rng.geometric(1.0 - b_t)
        sizes = np.where(extinct, 0, sizes)
        owner = np.repeat(np.arange(n), k)
        np.add.at(out, owner, sizes)
    if scalar:
        return int(out[0])
    return out


def gen_ld_pgf(p: GenLdParams, z: float) -> float:
    """Generating function of the generalised law for supercritical clones.

    E[z^B] = exp( c (b/a - 1) F[1, lam/(a-b); 1 + lam/(a-b); (b/a - z)/(1 - z)] )
    where F is Gauss's hypergeometric function. Only defined for a > b;
    sampling works for all parameters, the closed form does not.
    """
    if p.a <= p.b:
        raise ValueError("closed-form pgf requires clone birth rate a > death rate b")
    if not 0.0 <= z < 1.0:
        raise ValueError(f"z must lie in [0, 1), got {z}")
    if p.c == 0.0:
        return 1.0
    q = p.lam / (p.a - p.b)
    x = (p.b / p.a - z) / (1.0 - z)
    return math.exp(p.c * (p.b / p.a - 1.0) * hyp2f1_special(q, x))


def hyp2f1_special(p: float, x: float) -> float:
    """Evaluate F[1, p; 1+p; x] = p * sum_{k>=0} x^k / (p+k) for x < 1.

    The direct series is used for |x| < 1. For x <= -1 the Pfaff map
    y = x/(x-1) in [1/2, 1) restores convergence via
    F[1, p; 1+p; x] = (1-x)^(-1) F[1, 1; 1+p; y].
    Absolute tolerance 1e-12; raises ConvergenceError past 1e6 terms.
    """
    if not (math.isfinite(p) and p > 0):
        raise ValueError(f"p must be finite and positive, got {p}")
    if not (math.isfinite(x) and x < 1.0):
        raise ValueError(f"x must be finite and < 1, got {x}")
    if x == 0.0:
        return 1.0
    if x > -1.0:
        acc = 0.0
        xk = 1.0
        for k in range(HYP2F1_MAX_TERMS):
            term = p / (p + k) * xk
            acc += term
            # tail of the remaining geometric-dominated series
            bound = abs(term) * (x / (1.0 - x)) if x > 0 else abs(term * x)
            if bound < HYP2F1_TOL:
                return acc
            xk *= x
        raise ConvergenceError(f"series for F[1,{p};{1 + p};{x}] did not converge")
    y = x / (x - 1.0)
    acc = 0.0
    term = 1.0
    for k in range(HYP2F1_MAX_TERMS):
        acc += term
        if term * y / (1.0 - y) < HYP2F1_TOL:
            return acc / (1.0 - x)
        term *= y * (k + 1.0) / (p + k + 1.0)
    raise ConvergenceError(f"transformed series for F[1,{p};{1 + p};{x}] did not converge")
