"""Empirical summaries and theory-versus-simulation comparison.

Site frequency spectra are tabulated on raw integer mutant counts;
fraction-scale views use caller-supplied grids of thresholds. Mixture
targets combine generalised mutant-count laws with weights, using the
exact recursion where a component degenerates to the classic law and
Monte Carlo otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .distributions import GenLdParams, LdParams, ld_pmf, sample_gen_ld

__all__ = [
    "EmpiricalSfs",
    "MixtureTarget",
    "empirical_sfs",
    "sfs_tail_curve",
    "ks_distance",
    "ks_distance_two_sample",
    "mixture_pmf",
    "default_fraction_grid",
    "write_sfs_csv",
    "write_tail_csv",
]


def default_fraction_grid(num: int = 50, lo: float = 0.05, hi: float = 0.95) -> np.ndarray:
    """Log-spaced thresholds in (0, 1) for fraction-scale spectrum views."""
    return np.geomspace(lo, hi, num)


@dataclass
class EmpiricalSfs:
    """Counts of sites by mutant-cell number, for one simulated population."""

    counts: dict[int, int]
    n: int
    sites: int

    def __post_init__(self):
        if sum(self.counts.values()) != self.sites:
            raise ValueError("counts must cover every site exactly once")
        if any(k < 0 or k > self.n for k in self.counts):
            raise ValueError("mutant counts must lie in [0, n]")

    def normalized(self, k: int) -> float:
        """Fraction of sites mutated in exactly k cells."""
        return self.counts.get(k, 0) / self.sites

    def as_array(self, k_max: int) -> np.ndarray:
        out = np.zeros(k_max + 1, dtype=np.int64)
        for k, v in self.counts.items():
            if k <= k_max:
                out[k] = v
        return out


@dataclass
class MixtureTarget:
    """Weighted mixture of generalised mutant-count laws."""

    components: list[tuple[float, GenLdParams]] = field(default_factory=list)

    def __post_init__(self):
        weights = [w for w, _ in self.components]
        if any(w < 0 for w in weights):
            raise ValueError("mixture weights must be nonnegative")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {sum(weights)}")


def empirical_sfs(outcome) -> EmpiricalSfs:
    """Tabulate a simulation outcome's per-site mutant counts."""
    values, freq = np.unique(np.asarray(outcome.b), return_counts=True)
    counts = {int(k): int(v) for k, v in zip(values, freq)}
    return EmpiricalSfs(counts=counts, n=outcome.n, sites=len(outcome.b))


def sfs_tail_curve(outcome, grid) -> np.ndarray:
    """Number of sites mutated in more than a fraction a of cells, per grid point."""
    grid = np.asarray(grid, dtype=float)
    if grid.size and not ((grid > 0) & (grid < 1)).all():
        raise ValueError("grid thresholds must lie strictly inside (0, 1)")
    fractions = np.asarray(outcome.b, dtype=float) / outcome.n
    return np.array([int(np.count_nonzero(fractions > a)) for a in grid], dtype=np.int64)


def ks_distance(sample, pmf) -> float:
    """Sup distance between a sample's empirical CDF and a truncated model pmf.

    Mass not covered by the truncated pmf is treated as sitting beyond the
    truncation point, so the model CDF plateaus at the partial sum.
    """
    sample = np.asarray(sample, dtype=np.int64)
    if sample.size == 0:
        raise ValueError("sample must be nonempty")
    pmf = np.asarray(pmf, dtype=float)
    if pmf.sum() > 1.0 + 1e-9:
        raise ValueError("pmf must sum to at most 1")
    k_max = max(int(sample.max()), pmf.size - 1)
    model_cdf = np.cumsum(pmf)
    if k_max >= pmf.size:
        model_cdf = np.concatenate([model_cdf, np.full(k_max - pmf.size + 1, model_cdf[-1])])
    emp_cdf = np.cumsum(np.bincount(sample, minlength=k_max + 1)) / sample.size
    return float(np.abs(emp_cdf - model_cdf).max())


def ks_distance_two_sample(x, y) -> float:
    """Sup distance between the empirical CDFs of two integer samples."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if x.size == 0 or y.size == 0:
        raise ValueError("samples must be nonempty")
    hi = max(int(x.max()), int(y.max()))
    cdf_x = np.cumsum(np.bincount(x, minlength=hi + 1)) / x.size
    cdf_y = np.cumsum(np.bincount(y, minlength=hi + 1)) / y.size
    return float(np.abs(cdf_x - cdf_y).max())


def mixture_pmf(
    target: MixtureTarget,
    m_max: int,
    mc_draws: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mass function of a mixture target on {0, ..., m_max}.

    Components whose clones never die and whose birth rate equals the
    seeding rate reduce exactly to the classic law and use the recursion;
    every other component is estimated from mc_draws sampler draws.
    """
    if m_max < 0:
        raise ValueError("m_max must be nonnegative")
    if mc_draws < 1:
        raise ValueError("mc_draws must be positive")
    out = np.zeros(m_max + 1)
    for weight, params in target.components:
        if weight == 0.0:
            continue
        if params.b == 0.0 and params.a == params.lam:
            component = ld_pmf(LdParams(params.c), m_max)
        else:
            draws = sample_gen_ld(params, rng, mc_draws)
            component = np.bincount(np.minimum(draws, m_max + 1), minlength=m_max + 2)[: m_max + 1]
            component = component / mc_draws
        out += weight * component
    return out


def write_sfs_csv(sfs: EmpiricalSfs, path) -> None:
    """Write an empirical spectrum as rows of k,count."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "count"])
        for k in sorted(sfs.counts):
            writer.writerow([k, sfs.counts[k]])


def write_tail_csv(grid, counts, theory, path) -> None:
    """Write a fraction-scale tail curve as rows of a,count,theory_mean."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a", "count", "theory_mean"])
        for a, c, t in zip(grid, counts, theory):
            writer.writerow([f"{a:.10g}", f"{c:.10g}", f"{t:.10g}"])
