"""Limit objects of the growing-population model.

At positive population fractions the site frequency spectrum converges to
a point process: Poisson mutation multiplicities attached to the random
descendant fractions of a binary tree whose sibling splits are symmetrised
uniforms. This module samples those limit objects, evaluates the closed
forms attached to them, and audits the infinite sites assumption.

The limiting tree is infinite; samplers prune below a threshold value,
which leaves interval queries above the threshold exact in distribution:
every ancestor of a node carries a larger value, so no atom above the
threshold is ever lost. The expected retained node count is
2 (1/prune_eps - 1), so very small thresholds are expensive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "YuleFractions",
    "PointMeasure",
    "sample_yule_fractions",
    "sample_cox_sfs",
    "sample_conjecture_sfs",
    "mean_sfs_tail",
    "tail_prob_asymptote",
    "isa_violation_prob",
    "expected_isa_violations",
]

DEFAULT_PRUNE_EPS = 1e-4
_MAX_DEPTH = 62


def _code_to_address(code: int) -> tuple[int, ...]:
    depth = code.bit_length() - 1
    return tuple((code >> (depth - 1 - i)) & 1 for i in range(depth))


def _address_to_code(address) -> int:
    code = 1
    for bit in address:
        code = (code << 1) | int(bit)
    return code


@dataclass
class YuleFractions:
    """Descendant fractions of the limiting binary tree, pruned from below.

    Nodes are stored as heap codes (root's children are 2 and 3, the
    children of code k are 2k and 2k+1); sibling values sum to their
    parent's value and the root's children sum to one.
    """

    codes: np.ndarray
    values: np.ndarray
    prune_eps: float

    @property
    def entries(self) -> list[tuple[tuple[int, ...], float]]:
        """(address, value) pairs, addresses as tuples of 0/1 choices."""
        return [(_code_to_address(int(c)), float(v)) for c, v in zip(self.codes, self.values)]

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return dict(self.entries)

    def generation(self, depth: int):
        """Codes and values of the retained nodes at one depth."""
        mask = (self.codes >> depth) == 1
        return self.codes[mask], self.values[mask]

    def value(self, address) -> float | None:
        """Value at a node address (tuple of bits or heap code), if retained."""
        code = address if isinstance(address, (int, np.integer)) else _address_to_code(address)
        hit = np.flatnonzero(self.codes == code)
        return float(self.values[hit[0]]) if hit.size else None


@dataclass
class PointMeasure:
    """Integer-weighted atoms on (0, 1]."""

    atoms: list[tuple[float, int]]

    def __post_init__(self):
        for loc, mult in self.atoms:
            if not 0.0 < loc <= 1.0:
                raise ValueError(f"atom location {loc} outside (0, 1]")
            if mult < 0:
                raise ValueError("multiplicities must be nonnegative")

    def mass_above(self, a: float) -> int:
        """Total multiplicity of atoms located in (a, 1]."""
        return sum(mult for loc, mult in self.atoms if loc > a)

    def total(self) -> int:
        return sum(mult for _, mult in self.atoms)


def sample_yule_fractions(prune_eps: float, rng: np.random.Generator) -> YuleFractions:
    """Sample descendant fractions level by level until every value prunes.

    The root's two children get values (U, 1-U) for U uniform; every
    retained node passes its value to its children through an independent
    uniform split. Nodes below prune_eps are dropped; the retained set is
    almost surely finite because squared values decay geometrically with
    depth.
    """
    if not 0.0 < prune_eps < 1.0:
        raise ValueError(f"prune_eps must lie in (0, 1), got {prune_eps}")
    kept_codes = []
    kept_values = []
    codes = np.array([1], dtype=np.int64)
    values = np.array([1.0])
    depth = 0
    while codes.size:
        depth += 1
        if depth > _MAX_DEPTH:
            raise ValueError("prune_eps is too small: tree deeper than the address space")
        u = rng.random(codes.size)
        child_codes = np.empty(2 * codes.size, dtype=np.int64)
        child_codes[0::2] = 2 * codes
        child_codes[1::2] = 2 * codes + 1
        child_values = np.empty(2 * codes.size)
        child_values[0::2] = values * u
        child_values[1::2] = values * (1.0 - u)
        keep = child_values >= prune_eps
        codes = child_codes[keep]
        values = child_values[keep]
        kept_codes.append(codes)
        kept_values.append(values)
    return YuleFractions(
        codes=np.concatenate(kept_codes) if kept_codes else np.empty(0, dtype=np.int64),
        values=np.concatenate(kept_values) if kept_values else np.empty(0),
        prune_eps=prune_eps,
    )


def sample_cox_sfs(
    eta: float,
    rng: np.random.Generator,
    prune_eps: float = DEFAULT_PRUNE_EPS,
) -> PointMeasure:
    """Sample the limiting site frequency spectrum at positive fractions.

    Draws tree fractions and attaches an independent Poisson(eta) mutation
    multiplicity to every retained node; zero-multiplicity atoms are
    omitted. Interval masses above prune_eps are exact in distribution.
    """
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    fractions = sample_yule_fractions(prune_eps, rng)
    if fractions.values.size == 0 or eta == 0.0:
        return PointMeasure(atoms=[])
    mults = rng.poisson(eta, fractions.values.size)
    hit = mults > 0
    atoms = [(float(v), int(m)) for v, m in zip(fractions.values[hit], mults[hit])]
    return PointMeasure(atoms=atoms)


def _skeleton_lifetimes_and_fractions(rate: float, skeleton_n: int, rng: np.random.Generator):
    """Grow a pure-birth skeleton to skeleton_n cells.

    Returns, for each of the skeleton_n - 1 divided cells in division
    order: its realized lifetime, its descendant fraction at the stopping
    time (dividers only, self exclusive since a divider is replaced), and
    whether it was the founder.
    """
    total = 2 * skeleton_n - 1
    parents = np.empty(total, dtype=np.int64)
    parents[0] = -1
    birth_time = np.zeros(total)
    lifetimes = np.empty(skeleton_n - 1)
    divided = np.empty(skeleton_n - 1, dtype=np.int64)

    counts = np.arange(1, skeleton_n)
    times = np.cumsum(rng.exponential(1.0, skeleton_n - 1) / (rate * counts))
    picks = np.floor(rng.random(skeleton_n - 1) * counts).astype(np.int64)

    living = [0]
    next_idx = 1
    for k in range(skeleton_n - 1):
        pos = picks[k]
        cell = living[pos]
        t = times[k]
        lifetimes[k] = t - birth_time[cell]
        divided[k] = cell
        parents[next_idx] = cell
        parents[next_idx + 1] = cell
        birth_time[next_idx] = t
        birth_time[next_idx + 1] = t
        living[pos] = next_idx
        living.append(next_idx + 1)
        next_idx += 2

    desc = [0] * total
    for cell in living:
        desc[cell] = 1
    parent_list = parents.tolist()
    for idx in range(total - 1, 0, -1):
        if desc[idx]:
            desc[parent_list[idx]] += desc[idx]
    desc = np.asarray(desc, dtype=np.int64)
    fractions = desc[divided] / skeleton_n
    return lifetimes, fractions, divided == 0


def sample_conjecture_sfs(
    alpha: float,
    beta: float,
    eta: float,
    skeleton_n: int,
    rng: np.random.Generator,
) -> PointMeasure:
    """Sample the conjectured spectrum limit for populations with cell death.

    Simulates the skeleton of cells with surviving descendant lines, which
    grows as a pure-birth process at rate alpha - beta, until skeleton_n
    skeleton cells exist. Every completed-lifetime skeleton node witnessed
    1 + Poisson(2 beta * lifetime) divisions (the founder one fewer), each
    division carrying an independent Poisson(eta) count of new mutations,
    all located at the node's skeleton-descendant fraction at the stopping
    time. With beta = 0 this reduces to the plain limit up to the
    skeleton_n truncation; results should always be reported together with
    skeleton_n, since nodes still alive at the stopping time contribute
    nothing.
    """
    if not (alpha > beta >= 0):
        raise ValueError("requires division rate alpha > death rate beta >= 0")
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    if skeleton_n < 1:
        raise ValueError("skeleton_n must be positive")
    if skeleton_n == 1 or eta == 0.0:
        return PointMeasure(atoms=[])

    lifetimes, fractions, is_founder = _skeleton_lifetimes_and_fractions(
        alpha - beta, skeleton_n, rng
    )
    witnessed = 1 + rng.poisson(2.0 * beta * lifetimes)
    witnessed[is_founder] -= 1  # no division marks the founder's own appearance
    mutations = rng.poisson(eta * witnessed)
    hit = mutations > 0
    atoms = [(float(f), int(m)) for f, m in zip(fractions[hit], mutations[hit])]
    return PointMeasure(atoms=atoms)


def mean_sfs_tail(eta: float, a: float) -> float:
    """Expected limiting number of sites mutated in more than fraction a: 2 eta (1/a - 1)."""
    if not 0.0 < a < 1.0:
        raise ValueError(f"a must lie in (0, 1), got {a}")
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    return 2.0 * eta * (1.0 / a - 1.0)


def tail_prob_asymptote(a: float) -> float:
    """Small-rate limit of P[mutant fraction > a] per unit mutation rate: 2 (1/a - 1)."""
    if not 0.0 < a < 1.0:
        raise ValueError(f"a must lie in (0, 1), got {a}")
    return 2.0 * (1.0 / a - 1.0)


def isa_violation_prob(n: int, mu: float) -> float:
    """Probability that a site mutates at least twice while growing to n cells.

    Without cell death the number of mutation opportunities is 2n-2 (two
    daughters per division), so the event count is binomial and the
    two-or-more tail is 1 - (1-mu)^(2n-2) - (2n-2) mu (1-mu)^(2n-3).
    Evaluated in log space so that n around 1e9 stays finite and accurate.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be a probability, got {mu}")
    if mu == 0.0:
        return 0.0
    if mu == 1.0:
        return 1.0
    trials = 2 * n - 2
    log_zero_or_one = (trials - 1) * math.log1p(-mu) + math.log1p((trials - 1) * mu)
    return -math.expm1(log_zero_or_one)


def expected_isa_violations(n: int, mu: float, sites: int) -> float:
    """Expected number of sites violating the infinite sites assumption."""
    if sites < 1:
        raise ValueError(f"sites must be positive, got {sites}")
    return sites * isa_violation_prob(n, mu)
