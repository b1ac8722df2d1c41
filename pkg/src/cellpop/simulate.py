"""Exact forward simulation of a branching, mutating cell population.

One founder cell divides (and possibly dies) according to a continuous
time branching process whose rates may depend on the genotype at a set
of selective sites. At every division each site of each daughter mutates
independently. The population is observed the first time it reaches n
living cells; runs that go extinct first are discarded and restarted,
which implements conditioning on reaching n.

Genomes are stored sparsely as differences from the founder, so memory
scales with the number of mutation events rather than with n * sites.
A site that mutates and later reverts counts as unmutated: mutant counts
compare nucleotides against the founder, not mutation history.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NUCLEOTIDES",
    "MutationModel",
    "FitnessModel",
    "LineageTree",
    "SimOutcome",
    "SingleSiteOutcome",
    "TailCurve",
    "simulate_to_n",
    "descendant_fractions",
    "embedded_chain_step_b",
    "embedded_chain_step_bhat",
    "single_site_chain",
    "single_site_tail",
    "write_tree_csv",
]

NUCLEOTIDES = "ACGT"
_NT_INDEX = {ch: k for k, ch in enumerate(NUCLEOTIDES)}

MAX_POPULATION = 10**7
MAX_SITES = 10**7
_ROW_SUM_TOL = 1e-12


def _encode_reference(sites: int, reference) -> np.ndarray:
    if reference is None:
        return np.zeros(sites, dtype=np.int8)
    if isinstance(reference, str):
        codes = [_NT_INDEX[ch] for ch in reference]
    else:
        codes = [c if isinstance(c, (int, np.integer)) else _NT_INDEX[c] for c in reference]
    ref = np.asarray(codes, dtype=np.int8)
    if ref.shape != (sites,):
        raise ValueError(f"reference must cover all {sites} sites")
    if ref.min() < 0 or ref.max() > 3:
        raise ValueError("reference nucleotides must be A, C, G or T")
    return ref


@dataclass(frozen=True)
class MutationModel:
    """Per-site nucleotide transition law applied to each daughter at division.

    In uniform mode every site changes with probability mu, landing on each
    of the three other nucleotides with probability mu/3. In per-site mode
    each site carries its own 4x4 row-stochastic transition matrix over
    (A, C, G, T).
    """

    sites: int
    reference: np.ndarray
    mu: float | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.sites < 1:
            raise ValueError("a mutation model needs at least one site")
        if self.sites > MAX_SITES:
            raise ValueError(f"sites={self.sites} exceeds the memory budget ({MAX_SITES})")
        if (self.mu is None) == (self.table is None):
            raise ValueError("exactly one of mu and table must be given")
        if self.mu is not None and not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must be a probability, got {self.mu}")
        if self.table is not None:
            t = self.table
            if t.shape != (self.sites, 4, 4):
                raise ValueError(f"table must have shape ({self.sites}, 4, 4)")
            if t.min() < 0.0 or t.max() > 1.0:
                raise ValueError("table entries must be probabilities")
            if np.abs(t.sum(axis=2) - 1.0).max() > _ROW_SUM_TOL:
                raise ValueError("every table row must sum to 1")

    @classmethod
    def uniform(cls, sites: int, mu: float, reference=None) -> "MutationModel":
        return cls(sites=sites, reference=_encode_reference(sites, reference), mu=mu)

    @classmethod
    def per_site(cls, table, reference=None) -> "MutationModel":
        table = np.asarray(table, dtype=float)
        sites = table.shape[0] if table.ndim == 3 else 0
        return cls(sites=sites, reference=_encode_reference(sites, reference), table=table)


@dataclass(frozen=True)
class FitnessModel:
    """Division and death rates as a function of the selective-site genotype.

    Genotype restrictions are tuples of nucleotide letters at the selective
    sites, in the order given. Restrictions absent from the rate maps fall
    back to the defaults.
    """

    selective_sites: tuple[int, ...] = ()
    division_rates: dict[tuple[str, ...], float] = field(default_factory=dict)
    death_rates: dict[tuple[str, ...], float] = field(default_factory=dict)
    default_division: float = 1.0
    default_death: float = 0.0

    def __post_init__(self):
        if len(set(self.selective_sites)) != len(self.selective_sites):
            raise ValueError("selective sites must be distinct")
        for rates in (self.division_rates, self.death_rates):
            if any(v < 0 for v in rates.values()):
                raise ValueError("rates must be nonnegative")
        if self.default_division < 0 or self.default_death < 0:
            raise ValueError("rates must be nonnegative")

    @classmethod
    def neutral(cls, division: float = 1.0, death: float = 0.0) -> "FitnessModel":
        """Rates that ignore the genome entirely."""
        return cls(default_division=division, default_death=death)

    def division_rate(self, restriction: tuple[str, ...]) -> float:
        return self.division_rates.get(restriction, self.default_division)

    def death_rate(self, restriction: tuple[str, ...]) -> float:
        return self.death_rates.get(restriction, self.default_death)

    def growth_rate(self, restriction: tuple[str, ...]) -> float:
        return self.division_rate(restriction) - self.death_rate(restriction)


@dataclass
class LineageTree:
    """Append-only arena of every cell ever created during one accepted run.

    Node k's parent has index < k; the founder is node 0 with parent -1.
    Genomes are sparse diffs (site -> nucleotide code) against the founder.
    """

    parents: list[int]
    birth_events: list[int]
    end_events: list  # event index at division/death, or None while alive
    diffs: dict[int, dict[int, int]]
    changed_at_birth: dict[int, tuple[int, ...]]
    alive: set[int]
    sites: int
    reference: np.ndarray

    def genome_diff(self, node: int) -> dict[int, int]:
        return self.diffs.get(node, {})


@dataclass
class SimOutcome:
    """State of the population the first time it holds n living cells."""

    n: int
    b: np.ndarray        # per-site count of living cells mutated at the site
    b_hat: np.ndarray    # per-site count of living cells descending from a mutant
    events: np.ndarray   # per-site mutation events among ancestors of living cells
    census: dict[tuple, int]  # sparse genome (tuple of (site, letter)) -> cell count
    attempts: int        # extinct runs discarded before this one
    divisions: int
    deaths: int
    tree: LineageTree | None = None

    @property
    def sites(self) -> int:
        return len(self.b)


class _Arena:
    """Mutable per-run state; reset wholesale when a run goes extinct."""

    def __init__(self, root_key):
        self.parents = [-1]
        self.birth_events = [-1]
        self.end_events = [None]
        self.diffs: dict[int, dict[int, int]] = {}
        self.taints: dict[int, frozenset] = {}
        self.changed: dict[int, tuple[int, ...]] = {}
        self.classes: dict[tuple, list[int]] = {root_key: [0]}
        self.living = 1
        self.divisions = 0
        self.deaths = 0


_EMPTY_DIFF: dict[int, int] = {}
_EMPTY_TAINT: frozenset = frozenset()


def _restriction(diff: dict[int, int], reference: np.ndarray, selective: tuple[int, ...]) -> tuple:
    return tuple(int(diff.get(s, reference[s])) for s in selective)


def _restriction_letters(key: tuple) -> tuple[str, ...]:
    return tuple(NUCLEOTIDES[c] for c in key)


class _UniformMutator:
    def __init__(self, model: MutationModel):
        self.sites = model.sites
        self.mu = model.mu
        self.ref = model.reference

    def daughter(self, parent_diff, rng):
        """Mutate one daughter; returns (diff, changed sites)."""
        m = int(rng.binomial(self.sites, self.mu))
        if m == 0:
            return parent_diff, ()
        if m * 16 < self.sites:
            chosen: set[int] = set()
            while len(chosen) < m:
                chosen.add(int(rng.integers(self.sites)))
            idx = sorted(chosen)
        else:
            idx = np.sort(rng.choice(self.sites, size=m, replace=False)).tolist()
        offsets = rng.integers(1, 4, size=m)
        diff = dict(parent_diff)
        for s, off in zip(idx, offsets):
            cur = diff.get(s, int(self.ref[s]))
            new = (cur + int(off)) % 4
            if new == int(self.ref[s]):
                diff.pop(s, None)
            else:
                diff[s] = new
        return diff, tuple(idx)


class _PerSiteMutator:
    def __init__(self, model: MutationModel):
        self.sites = model.sites
        self.ref = model.reference
        self.table = model.table
        diag = np.diagonal(model.table, axis1=1, axis2=2)
        self.change_prob = 1.0 - diag  # (sites, 4): prob of leaving each nucleotide

    def daughter(self, parent_diff, rng):
        cur = self.ref.astype(np.int64)
        if parent_diff:
            cur = cur.copy()
            for s, nt in parent_diff.items():
                cur[s] = nt
        p_change = self.change_prob[np.arange(self.sites), cur]
        hits = np.flatnonzero(rng.random(self.sites) < p_change)
        if hits.size == 0:
            return parent_diff, ()
        diff = dict(parent_diff)
        for s in hits.tolist():
            row = self.table[s, cur[s]].copy()
            row[cur[s]] = 0.0
            row /= row.sum()
            new = int(rng.choice(4, p=row))
            if new == int(self.ref[s]):
                diff.pop(s, None)
            else:
                diff[s] = new
        return diff, tuple(hits.tolist())


def simulate_to_n(
    mutation: MutationModel,
    fitness: FitnessModel,
    n: int,
    rng: np.random.Generator,
    keep_tree: bool = False,
    engine: str = "auto",
) -> SimOutcome:
    """Grow the population from one founder until n cells are alive.

    Parameters
    ----------
    mutation : MutationModel
        Per-site transition law applied to each daughter at division.
    fitness : FitnessModel
        Division and death rates per selective-site genotype. The founder's
        genotype must be supercritical.
    n : int
        Target number of living cells.
    rng : numpy.random.Generator
        Source of randomness; one stream per concurrent run.
    keep_tree : bool
        Retain the full lineage arena on the returned outcome.
    engine : str
        "auto" skips event-rate bookkeeping when nothing ever dies and no
        site is selective (the division order alone determines the stopping
        state); "general" forces the rate-weighted path. The two engines
        agree in distribution.

    Extinct runs are discarded and restarted with fresh randomness from
    the same stream; the number of discarded runs is reported.
    """
    if engine not in ("auto", "general"):
        raise ValueError(f"unknown engine {engine!r}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if n > MAX_POPULATION:
        raise ValueError(f"n={n} exceeds the memory budget ({MAX_POPULATION})")
    for s in fitness.selective_sites:
        if not 0 <= s < mutation.sites:
            raise ValueError(f"selective site {s} is outside the genome")

    ref = mutation.reference
    selective = tuple(fitness.selective_sites)
    root_key = _restriction(_EMPTY_DIFF, ref, selective)
    root_letters = _restriction_letters(root_key)
    if fitness.division_rate(root_letters) <= fitness.death_rate(root_letters):
        raise ValueError("the founder genotype must be supercritical (division rate > death rate)")

    mutator = _UniformMutator(mutation) if mutation.mu is not None else _PerSiteMutator(mutation)

    rate_cache: dict[tuple, tuple[float, float]] = {}

    def rates_for(key: tuple) -> tuple[float, float]:
        got = rate_cache.get(key)
        if got is None:
            letters = _restriction_letters(key)
            got = (fitness.division_rate(letters), fitness.death_rate(letters))
            rate_cache[key] = got
        return got

    death_free = (
        engine == "auto"
        and not selective
        and fitness.death_rate(()) == 0.0
        and not fitness.death_rates
    )

    attempts = 0
    event_index = 0
    arena = _Arena(root_key)

    def divide(key: tuple):
        nonlocal event_index
        cells = arena.classes[key]
        pos = int(rng.integers(len(cells)))
        parent = cells[pos]
        cells[pos] = cells[-1]
        cells.pop()
        if not cells:
            del arena.classes[key]
        arena.end_events[parent] = event_index
        p_diff = arena.diffs.get(parent, _EMPTY_DIFF)
        p_taint = arena.taints.get(parent, _EMPTY_TAINT)
        for _ in range(2):
            diff, changed_sites = mutator.daughter(p_diff, rng)
            idx = len(arena.parents)
            arena.parents.append(parent)
            arena.birth_events.append(event_index)
            arena.end_events.append(None)
            if diff:
                arena.diffs[idx] = diff
                taint = p_taint if p_taint.issuperset(diff) else p_taint | frozenset(diff)
            else:
                taint = p_taint
            if taint:
                arena.taints[idx] = taint
            if changed_sites:
                arena.changed[idx] = changed_sites
            child_key = key if not selective or not changed_sites else _restriction(diff, ref, selective)
            arena.classes.setdefault(child_key, []).append(idx)
        arena.living += 1
        arena.divisions += 1
        event_index += 1

    def kill(key: tuple):
        nonlocal event_index
        cells = arena.classes[key]
        pos = int(rng.integers(len(cells)))
        victim = cells[pos]
        cells[pos] = cells[-1]
        cells.pop()
        if not cells:
            del arena.classes[key]
        arena.end_events[victim] = event_index
        arena.living -= 1
        arena.deaths += 1
        event_index += 1

    while arena.living < n:
        if len(arena.parents) > 2 * MAX_POPULATION + n:
            raise ValueError("lineage arena exceeds the memory budget")
        if death_free:
            divide(root_key)
            continue
        total = 0.0
        weights = []
        for key, cells in arena.classes.items():
            div_rate, death_rate = rates_for(key)
            w_div = div_rate * len(cells)
            w_death = death_rate * len(cells)
            weights.append((key, w_div, w_death))
            total += w_div + w_death
        if total <= 0.0:
            raise ValueError("population is stuck: every living genotype has zero rates")
        u = rng.random() * total
        for key, w_div, w_death in weights:
            if u < w_div:
                divide(key)
                break
            u -= w_div
            if u < w_death:
                kill(key)
                break
            u -= w_death
        if arena.living == 0:
            attempts += 1
            event_index = 0
            arena = _Arena(root_key)

    return _build_outcome(arena, mutation, n, attempts, keep_tree)


def _build_outcome(arena: _Arena, mutation: MutationModel, n: int, attempts: int, keep_tree: bool) -> SimOutcome:
    sites = mutation.sites
    living_cells = [c for cells in arena.classes.values() for c in cells]

    b = np.zeros(sites, dtype=np.int64)
    b_hat = np.zeros(sites, dtype=np.int64)
    census: dict[tuple, int] = {}
    for cell in living_cells:
        diff = arena.diffs.get(cell, _EMPTY_DIFF)
        for s in diff:
            b[s] += 1
        for s in arena.taints.get(cell, _EMPTY_TAINT):
            b_hat[s] += 1
        key = tuple(sorted((s, NUCLEOTIDES[nt]) for s, nt in diff.items()))
        census[key] = census.get(key, 0) + 1

    parents = arena.parents
    marked = np.zeros(len(parents), dtype=bool)
    for cell in living_cells:
        x = cell
        while x != -1 and not marked[x]:
            marked[x] = True
            x = parents[x]
    events = np.zeros(sites, dtype=np.int64)
    for idx, changed_sites in arena.changed.items():
        par = parents[idx]
        if par != -1 and marked[par]:
            for s in changed_sites:
                events[s] += 1

    if not (b <= b_hat).all():
        raise RuntimeError("internal accounting error: mutant count exceeded descendant count")

    tree = None
    if keep_tree:
        tree = LineageTree(
            parents=parents,
            birth_events=arena.birth_events,
            end_events=arena.end_events,
            diffs=arena.diffs,
            changed_at_birth=arena.changed,
            alive=set(living_cells),
            sites=sites,
            reference=mutation.reference,
        )

    return SimOutcome(
        n=n,
        b=b,
        b_hat=b_hat,
        events=events,
        census=census,
        attempts=attempts,
        divisions=arena.divisions,
        deaths=arena.deaths,
        tree=tree,
    )


def descendant_fractions(tree: LineageTree) -> dict[int, float]:
    """Fraction of living cells descending from each node, node inclusive.

    Covers every node with at least one living descendant; the founder
    maps to 1. Computed by one bottom-up pass over the arena.
    """
    if not tree.alive:
        raise ValueError("tree has no living cells")
    counts = np.zeros(len(tree.parents), dtype=np.int64)
    for cell in tree.alive:
        counts[cell] += 1
    for idx in range(len(tree.parents) - 1, 0, -1):
        if counts[idx]:
            counts[tree.parents[idx]] += counts[idx]
    n = len(tree.alive)
    return {i: counts[i] / n for i in range(len(counts)) if counts[i]}


def write_tree_csv(tree: LineageTree, path) -> None:
    """Dump a lineage tree as node_id,parent_id,mutated_sites rows.

    mutated_sites holds semicolon-separated site:nucleotide pairs for the
    node's differences from the founder genome.
    """
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "parent_id", "mutated_sites"])
        for idx in range(len(tree.parents)):
            diff = tree.diffs.get(idx, _EMPTY_DIFF)
            pairs = ";".join(f"{s}:{NUCLEOTIDES[nt]}" for s, nt in sorted(diff.items()))
            writer.writerow([idx, tree.parents[idx], pairs])


def embedded_chain_step_b(r: int, j: int, mu: float, rng: np.random.Generator) -> int:
    """One step of the single-site mutant-count chain, indexed by cell number.

    With j mutants among r cells, a uniformly chosen cell divides and both
    daughters mutate independently; returns the mutant count among r+1.
    """
    _check_chain_args(r, j, mu)
    third = mu / 3.0
    p_down = (j / r) * third**2
    p_same = (j / r) * 2 * third * (1 - third) + ((r - j) / r) * (1 - mu) ** 2
    p_up = (j / r) * (1 - third) ** 2 + ((r - j) / r) * 2 * mu * (1 - mu)
    u = rng.random()
    if u < p_down:
        return j - 1
    if u < p_down + p_same:
        return j
    if u < p_down + p_same + p_up:
        return j + 1
    return j + 2


def embedded_chain_step_bhat(r: int, j: int, mu: float, rng: np.random.Generator) -> int:
    """One step of the single-site descendant-of-mutant chain.

    Membership is hereditary, so a dividing descendant always contributes
    both daughters; a clean parent's daughters enter only by mutating.
    """
    _check_chain_args(r, j, mu)
    p_same = ((r - j) / r) * (1 - mu) ** 2
    p_up = j / r + ((r - j) / r) * 2 * mu * (1 - mu)
    u = rng.random()
    if u < p_same:
        return j
    if u < p_same + p_up:
        return j + 1
    return j + 2


def _check_chain_args(r: int, j: int, mu: float) -> None:
    if r < 1:
        raise ValueError(f"r must be at least 1, got {r}")
    if not 0 <= j <= r:
        raise ValueError(f"count j must lie in [0, r], got j={j}, r={r}")
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be a probability, got {mu}")


@dataclass
class SingleSiteOutcome:
    """Vectorised per-replicate results of the single-site chain."""

    b: np.ndarray
    b_hat: np.ndarray
    events: np.ndarray
    attempts: np.ndarray


@dataclass
class TailCurve:
    """Empirical tail frequencies with their Monte Carlo standard errors."""

    grid: np.ndarray
    prob: np.ndarray
    stderr: np.ndarray


def single_site_chain(
    n: int,
    mu: float,
    replicates: int,
    rng: np.random.Generator,
    division_rate: float = 1.0,
    death_rate: float = 0.0,
) -> SingleSiteOutcome:
    """Run the single-site population chain to n cells, replicated in lockstep.

    Tracks the mutant count, the descendant-of-mutant count and the number
    of mutation events jointly, with one uniformly chosen cell dividing or
    dying per step. Extinct replicates restart with fresh randomness and
    their restart count is reported. Event counts include every division
    edge, which equals the ancestors-of-living definition exactly when the
    death rate is zero.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be a probability, got {mu}")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    if division_rate <= death_rate:
        raise ValueError("the chain requires a supercritical population (division > death)")

    third = mu / 3.0
    p_div = division_rate / (division_rate + death_rate)
    deaths_possible = death_rate > 0.0

    r = np.ones(replicates, dtype=np.int64)
    j = np.zeros(replicates, dtype=np.int64)
    jh = np.zeros(replicates, dtype=np.int64)
    ev = np.zeros(replicates, dtype=np.int64)
    att = np.zeros(replicates, dtype=np.int64)
    done = r >= n

    max_steps = 10**7 + 200 * n
    for _ in range(max_steps):
        if done.all():
            break
        act = ~done
        if deaths_possible:
            is_div = rng.random(replicates) < p_div
        else:
            is_div = np.ones(replicates, dtype=bool)
        coord = rng.random(replicates) * r
        in_mut = coord < j
        in_desc = coord < jh  # includes the mutant class
        u1 = rng.random(replicates)
        u2 = rng.random(replicates)

        c1 = u1 < mu
        c2 = u2 < mu
        stays1 = u1 >= third  # mutant parent's daughter remains mutant
        stays2 = u2 >= third
        changes = c1.astype(np.int64) + c2.astype(np.int64)
        dj_div = np.where(in_mut, stays1.astype(np.int64) + stays2.astype(np.int64) - 1, changes)
        djh_div = np.where(in_desc, 1, changes)

        dj = np.where(is_div, dj_div, -in_mut.astype(np.int64))
        djh = np.where(is_div, djh_div, -in_desc.astype(np.int64))
        dr = np.where(is_div, 1, -1)
        dev = np.where(is_div, changes, 0)

        r = np.where(act, r + dr, r)
        j = np.where(act, j + dj, j)
        jh = np.where(act, jh + djh, jh)
        ev = np.where(act, ev + dev, ev)

        extinct = act & (r == 0)
        if extinct.any():
            att[extinct] += 1
            r[extinct] = 1
            j[extinct] = 0
            jh[extinct] = 0
            ev[extinct] = 0
        done = done | (r >= n)
    else:
        raise RuntimeError("single-site chain did not finish within its step budget")

    if not ((0 <= j) & (j <= jh) & (jh <= n)).all():
        raise RuntimeError("internal accounting error in the single-site chain")
    return SingleSiteOutcome(b=j, b_hat=jh, events=ev, attempts=att)


def single_site_tail(
    n: int,
    mu: float,
    replicates: int,
    grid,
    rng: np.random.Generator,
) -> TailCurve:
    """Empirical P[mutant fraction > a] over a grid, from the single-site chain."""
    grid = np.asarray(grid, dtype=float)
    if grid.size and not ((grid > 0) & (grid < 1)).all():
        raise ValueError("grid thresholds must lie strictly inside (0, 1)")
    out = single_site_chain(n, mu, replicates, rng)
    fractions = out.b / n
    prob = np.array([np.mean(fractions > a) for a in grid])
    stderr = np.sqrt(prob * (1.0 - prob) / replicates)
    return TailCurve(grid=grid, prob=prob, stderr=stderr)
