"""Local job markets: map-equation community detection on daily flow graphs.

A daily municipality OD matrix is read as a weighted directed graph. A random
walk with uniform teleportation yields stationary visit rates per node and flow
per edge; the two-level map equation scores any node partition by the expected
description length (bits per step) of that walk under a two-level codebook, and
a greedy multilevel optimizer searches for the partition minimizing it.
Teleportation is unrecorded: teleport (and dangling) steps move the walker but
are not charged to module exit/enter flows.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .od import DailyOD

DEFAULT_TELEPORT = 0.15
DEFAULT_TRIALS = 10
GAIN_EPS = 1e-12  # strictly-negative gain threshold, prevents cycling on ties


class PowerIterationError(RuntimeError):
    """Power iteration failed to reach the tolerance; carries the last residual."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"stationary distribution not converged after {iterations} iterations "
            f"(residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class FlowGraph:
    """Weighted directed graph; node set may include isolated nodes."""

    nodes: list[str]
    edges: dict[tuple[str, str], float]

    def __post_init__(self) -> None:
        known = set(self.nodes)
        for (u, v), w in self.edges.items():
            if w <= 0:
                raise ValueError(f"edge ({u},{v}) has non-positive weight {w}")
            if u not in known or v not in known:
                raise ValueError(f"edge ({u},{v}) references an unknown node")

    @classmethod
    def from_daily_od(cls, od: DailyOD, extra_nodes: Iterable[str] = ()) -> "FlowGraph":
        if od.granularity != "municipality":
            raise ValueError("local job markets are detected on municipality matrices")
        nodes = sorted(od.territory_ids() | set(extra_nodes))
        edges = {pair: float(count) for pair, count in od.cells.items()}
        return cls(nodes=nodes, edges=edges)

    @classmethod
    def from_cells(
        cls, cells: dict[tuple[str, str], float], extra_nodes: Iterable[str] = ()
    ) -> "FlowGraph":
        nodes = set(extra_nodes)
        for u, v in cells:
            nodes.add(u)
            nodes.add(v)
        return cls(nodes=sorted(nodes), edges=dict(cells))


@dataclass(frozen=True)
class StationaryFlow:
    """Stationary visit rates and per-edge walk flows of the teleporting random walk."""

    visit_rates: dict[str, float]
    edge_flows: dict[tuple[str, str], float]
    teleport_rate: float


@dataclass(frozen=True)
class Partition:
    """Node -> module assignment with its two-level description length in bits."""

    assignment: dict[str, int]
    codelength: float

    @property
    def module_count(self) -> int:
        return len(set(self.assignment.values()))

    def modules(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = defaultdict(list)
        for node in sorted(self.assignment):
            out[self.assignment[node]].append(node)
        return dict(out)


def stationary_flow(
    g: FlowGraph,
    tau: float = DEFAULT_TELEPORT,
    tol: float = 1e-12,
    max_iter: int = 10000,
) -> StationaryFlow:
    """Power-iterate p' = (1-tau) p P + tau u to the stationary visit rates.

    P is row-stochastic over out-weights; dangling rows redistribute uniformly.
    Edge flows are (1-tau) * p_u * w_uv / out_w(u): teleport and dangling steps
    stay unrecorded. Raises PowerIterationError if tol is not reached in L1.
    """
    if not g.nodes:
        raise ValueError("stationary_flow needs a non-empty graph")
    nodes = sorted(g.nodes)
    index = {node: i for i, node in enumerate(nodes)}
    n = len(nodes)
    if g.edges:
        src = np.array([index[u] for (u, _v) in g.edges], dtype=np.intp)
        dst = np.array([index[v] for (_u, v) in g.edges], dtype=np.intp)
        weight = np.array(list(g.edges.values()), dtype=float)
    else:
        src = dst = np.empty(0, dtype=np.intp)
        weight = np.empty(0, dtype=float)
    out_weight = np.zeros(n)
    np.add.at(out_weight, src, weight)
    transition = weight / out_weight[src] if len(weight) else weight
    dangling = out_weight == 0.0

    p = np.full(n, 1.0 / n)
    residual = math.inf
    for _ in range(max_iter):
        pushed = np.zeros(n)
        np.add.at(pushed, dst, p[src] * transition)
        spread = (tau + (1.0 - tau) * p[dangling].sum()) / n
        new_p = (1.0 - tau) * pushed + spread
        residual = float(np.abs(new_p - p).sum())
        p = new_p
        if residual < tol:
            break
    else:
        raise PowerIterationError(residual, max_iter)

    flows = (1.0 - tau) * p[src] * transition
    return StationaryFlow(
        visit_rates={node: float(p[index[node]]) for node in nodes},
        edge_flows={pair: float(q) for pair, q in zip(g.edges, flows)},
        teleport_rate=tau,
    )


def _plogp(x: float) -> float:
    return x * math.log2(x) if x > 1e-15 else 0.0


def map_equation(assignment: dict[str, int], flow: StationaryFlow) -> float:
    """Two-level description length (bits per step) of a partition.

    L = q * H(exit distribution) + sum_i (q_i + P_i) * H(module codebook i),
    where q_i sums the edge flows leaving module i and P_i the member visit
    rates; evaluated in the equivalent plogp form.
    """
    missing = set(flow.visit_rates) - set(assignment)
    if missing:
        raise ValueError(f"partition misses nodes: {sorted(missing)[:5]}")
    exit_flow: dict[int, float] = defaultdict(float)
    module_flow: dict[int, float] = defaultdict(float)
    for node, p in flow.visit_rates.items():
        module_flow[assignment[node]] += p
        exit_flow.setdefault(assignment[node], 0.0)
    for (u, v), q in flow.edge_flows.items():
        if u != v and assignment[u] != assignment[v]:
            exit_flow[assignment[u]] += q
    total_exit = sum(exit_flow.values())
    length = _plogp(total_exit)
    for module, q_exit in exit_flow.items():
        length -= 2.0 * _plogp(q_exit)
        length += _plogp(q_exit + module_flow[module])
    for p in flow.visit_rates.values():
        length -= _plogp(p)
    return length


@dataclass
class _Level:
    """One optimization level: node flows plus self-loop-free adjacency."""

    node_flow: list[float]
    out_adj: list[list[tuple[int, float]]]
    in_adj: list[list[tuple[int, float]]]
    s_out: list[float] = field(init=False)

    def __post_init__(self) -> None:
        self.s_out = [sum(q for _, q in adj) for adj in self.out_adj]

    @property
    def size(self) -> int:
        return len(self.node_flow)


class _MapState:
    """Partition bookkeeping with incrementally maintained codelength terms.

    The flat-node entropy term is constant under moves at every level, so the
    maintained value always equals the map equation of the induced flat
    partition.
    """

    def __init__(self, level: _Level, module_of: list[int], node_term: float):
        self.level = level
        self.module_of = list(module_of)
        self.node_term = node_term
        n = level.size
        self.exit = [0.0] * n
        self.flow = [0.0] * n
        self.size = [0] * n
        for node, module in enumerate(self.module_of):
            self.flow[module] += level.node_flow[node]
            self.size[module] += 1
        for node in range(n):
            module = self.module_of[node]
            for target, q in level.out_adj[node]:
                if self.module_of[target] != module:
                    self.exit[module] += q
        modules = set(self.module_of)
        self.sum_exit = sum(self.exit[m] for m in modules)
        self.s1 = sum(_plogp(self.exit[m]) for m in modules)
        self.s2 = sum(_plogp(self.exit[m] + self.flow[m]) for m in modules)
        self._empty = [m for m in range(n - 1, -1, -1) if self.size[m] == 0]

    def empty_module(self) -> int | None:
        return self._empty[-1] if self._empty else None

    def codelength(self) -> float:
        return _plogp(self.sum_exit) - 2.0 * self.s1 + self.s2 - self.node_term

    def gain(
        self, node: int, target_module: int, wm_out: dict, wm_in: dict
    ) -> tuple[float, float, float]:
        """Codelength delta for moving `node` to `target_module`, plus both new exit flows."""
        level = self.level
        current = self.module_of[node]
        p = level.node_flow[node]
        exit_a, exit_b = self.exit[current], self.exit[target_module]
        new_exit_a = exit_a - level.s_out[node] + wm_out.get(current, 0.0) + wm_in.get(current, 0.0)
        new_exit_b = exit_b + level.s_out[node] - wm_out.get(target_module, 0.0) - wm_in.get(target_module, 0.0)
        new_exit_a = max(new_exit_a, 0.0)  # guards float cancellation only
        new_exit_b = max(new_exit_b, 0.0)
        delta_s1 = _plogp(new_exit_a) + _plogp(new_exit_b) - _plogp(exit_a) - _plogp(exit_b)
        delta_s2 = (
            _plogp(new_exit_a + self.flow[current] - p)
            + _plogp(new_exit_b + self.flow[target_module] + p)
            - _plogp(exit_a + self.flow[current])
            - _plogp(exit_b + self.flow[target_module])
        )
        new_sum = self.sum_exit + (new_exit_a + new_exit_b) - (exit_a + exit_b)
        delta = _plogp(new_sum) - _plogp(self.sum_exit) - 2.0 * delta_s1 + delta_s2
        return delta, new_exit_a, new_exit_b

    def apply(self, node: int, target_module: int, new_exit_a: float, new_exit_b: float) -> None:
        current = self.module_of[node]
        p = self.level.node_flow[node]
        exit_a, exit_b = self.exit[current], self.exit[target_module]
        self.s1 += _plogp(new_exit_a) + _plogp(new_exit_b) - _plogp(exit_a) - _plogp(exit_b)
        self.s2 += (
            _plogp(new_exit_a + self.flow[current] - p)
            + _plogp(new_exit_b + self.flow[target_module] + p)
            - _plogp(exit_a + self.flow[current])
            - _plogp(exit_b + self.flow[target_module])
        )
        self.sum_exit += (new_exit_a + new_exit_b) - (exit_a + exit_b)
        self.exit[current] = new_exit_a
        self.exit[target_module] = new_exit_b
        self.flow[current] -= p
        self.flow[target_module] += p
        self.module_of[node] = target_module
        if self.size[target_module] == 0 and self._empty and self._empty[-1] == target_module:
            self._empty.pop()
        self.size[current] -= 1
        self.size[target_module] += 1
        if self.size[current] == 0:
            # Exact zeros: float residue must not linger into a later reuse of the id.
            self.sum_exit -= self.exit[current]
            self.flow[current] = 0.0
            self.exit[current] = 0.0
            self._empty.append(current)


def _sweep_until_stable(state: _MapState, rng: np.random.Generator) -> bool:
    """Sweep nodes in fresh seeded random order until a full sweep makes no move."""
    level = state.level
    n = level.size
    moved_any = False
    while True:
        moved_in_sweep = False
        for node in rng.permutation(n):
            node = int(node)
            wm_out: dict[int, float] = defaultdict(float)
            for target, q in level.out_adj[node]:
                wm_out[state.module_of[target]] += q
            wm_in: dict[int, float] = defaultdict(float)
            for source, q in level.in_adj[node]:
                wm_in[state.module_of[source]] += q
            current = state.module_of[node]
            candidates = sorted((set(wm_out) | set(wm_in)) - {current})
            if state.size[current] > 1:
                # Leaving into a fresh module can free a misplaced node for a
                # better merge on a later sweep or level.
                empty = state.empty_module()
                if empty is not None:
                    candidates.append(empty)
            best = None
            for candidate in candidates:
                delta, new_a, new_b = state.gain(node, candidate, wm_out, wm_in)
                if delta < -GAIN_EPS and (best is None or delta < best[0]):
                    best = (delta, candidate, new_a, new_b)
            if best is not None:
                _, candidate, new_a, new_b = best
                state.apply(node, candidate, new_a, new_b)
                moved_in_sweep = True
                moved_any = True
        if not moved_in_sweep:
            return moved_any


def _aggregate(level: _Level, module_of: list[int]) -> tuple[_Level, list[int]]:
    """Collapse modules into super-nodes; returns the new level and node -> super-node map."""
    renumber: dict[int, int] = {}
    for node in range(level.size):
        module = module_of[node]
        if module not in renumber:
            renumber[module] = len(renumber)
    m = len(renumber)
    node_flow = [0.0] * m
    for node in range(level.size):
        node_flow[renumber[module_of[node]]] += level.node_flow[node]
    agg: dict[tuple[int, int], float] = defaultdict(float)
    for node in range(level.size):
        mu = renumber[module_of[node]]
        for target, q in level.out_adj[node]:
            mv = renumber[module_of[target]]
            if mu != mv:  # intra-module flow becomes a self-loop and drops out
                agg[(mu, mv)] += q
    out_adj: list[list[tuple[int, float]]] = [[] for _ in range(m)]
    in_adj: list[list[tuple[int, float]]] = [[] for _ in range(m)]
    for (mu, mv), q in agg.items():
        out_adj[mu].append((mv, q))
        in_adj[mv].append((mu, q))
    collapse = [renumber[module_of[node]] for node in range(level.size)]
    return _Level(node_flow=node_flow, out_adj=out_adj, in_adj=in_adj), collapse


def _flat_level(nodes: list[str], flow: StationaryFlow) -> _Level:
    index = {node: i for i, node in enumerate(nodes)}
    n = len(nodes)
    out_adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    in_adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for (u, v), q in flow.edge_flows.items():
        if u == v:
            continue  # a self-loop never crosses a module boundary
        out_adj[index[u]].append((index[v], q))
        in_adj[index[v]].append((index[u], q))
    return _Level(
        node_flow=[flow.visit_rates[node] for node in nodes],
        out_adj=out_adj,
        in_adj=in_adj,
    )


def _compact(assignment: list[int]) -> list[int]:
    renumber: dict[int, int] = {}
    out = []
    for module in assignment:
        if module not in renumber:
            renumber[module] = len(renumber)
        out.append(renumber[module])
    return out


def _one_trial(
    flat: _Level,
    node_term: float,
    rng: np.random.Generator,
    consistency_check: bool = False,
) -> tuple[list[int], float]:
    """One seeded multilevel greedy run; returns (flat assignment, codelength)."""
    n = flat.size
    flat_assignment = list(range(n))
    current_length = _MapState(flat, flat_assignment, node_term).codelength()
    while True:
        length_before = current_length
        level = flat
        to_level = list(range(n))  # flat node -> node at the current level
        level_modules = _compact(flat_assignment)
        while True:
            state = _MapState(level, level_modules, node_term)
            if consistency_check:
                _assert_consistent(state)
            moved = _sweep_until_stable(state, rng)
            module_count = len(set(state.module_of))
            flat_assignment = [state.module_of[to_level[i]] for i in range(n)]
            current_length = state.codelength()
            if not moved and module_count == level.size:
                break  # aggregation would be the identity
            level, collapse = _aggregate(level, state.module_of)
            to_level = [collapse[to_level[i]] for i in range(n)]
            level_modules = list(range(level.size))
        if current_length >= length_before - GAIN_EPS:
            return _compact(flat_assignment), current_length


def _assert_consistent(state: _MapState) -> None:
    fresh = _MapState(state.level, state.module_of, state.node_term)
    if abs(fresh.codelength() - state.codelength()) > 1e-9:
        raise AssertionError("maintained codelength diverged from recomputation")


def infomap(
    g: FlowGraph,
    seed: int,
    trials: int = DEFAULT_TRIALS,
    tau: float = DEFAULT_TELEPORT,
    flow: StationaryFlow | None = None,
    consistency_check: bool = False,
) -> Partition:
    """Best partition over seeded greedy multilevel trials minimizing the map equation.

    Each trial starts from singleton modules, sweeps nodes in seeded random
    order into the neighboring module with the largest strictly negative
    codelength change, aggregates modules into super-nodes once stable, and
    repeats until a full multilevel pass stops improving. Deterministic given
    (seed, trials); isolated nodes end up as singleton modules.
    """
    if flow is None:
        flow = stationary_flow(g, tau=tau)
    nodes = sorted(g.nodes)
    flat = _flat_level(nodes, flow)
    node_term = sum(_plogp(p) for p in flow.visit_rates.values())
    best: tuple[float, list[int]] | None = None
    for trial in range(max(1, trials)):
        rng = np.random.default_rng([seed, trial])
        assignment, length = _one_trial(flat, node_term, rng, consistency_check)
        if best is None or length < best[0] - GAIN_EPS:
            best = (length, assignment)
    length, raw = best
    compacted = _compact(raw)
    return Partition(
        assignment={node: compacted[i] for i, node in enumerate(nodes)},
        codelength=length,
    )


@dataclass(frozen=True)
class DayCommunities:
    """Per-day detection outcome for the community count series."""

    date: date
    partition: Partition | None  # None when the day had no flow at all
    community_count: int
    empty_day: bool

    @property
    def is_sunday(self) -> bool:
        return self.date.weekday() == 6


def community_count_series(
    ods: Sequence[DailyOD],
    seed: int,
    trials: int = DEFAULT_TRIALS,
    tau: float = DEFAULT_TELEPORT,
    registry_nodes: Iterable[str] = (),
    window: int = 1,
) -> list[DayCommunities]:
    """Per-day module counts of the daily flow graphs, date-ordered.

    With window > 1 each day's graph sums the cells of the trailing `window`
    days (rolling-window smoothing). A day with no flow has no partition; its
    count falls back to the number of attached registry nodes (each isolated)
    and the day is flagged.
    """
    registry_nodes = sorted(set(registry_nodes))
    ordered = sorted(ods, key=lambda od: od.date)
    results: list[DayCommunities] = []
    for i, od in enumerate(ordered):
        cells: dict[tuple[str, str], float] = defaultdict(float)
        for past in ordered[max(0, i - window + 1): i + 1]:
            for pair, count in past.cells.items():
                cells[pair] += float(count)
        if not cells:
            results.append(
                DayCommunities(
                    date=od.date,
                    partition=None,
                    community_count=len(registry_nodes),
                    empty_day=True,
                )
            )
            continue
        graph = FlowGraph.from_cells(dict(cells), extra_nodes=registry_nodes)
        partition = infomap(graph, seed=seed, trials=trials, tau=tau)
        results.append(
            DayCommunities(
                date=od.date,
                partition=partition,
                community_count=partition.module_count,
                empty_day=False,
            )
        )
    return results


def write_community_counts_csv(days: Sequence[DayCommunities], path: str | Path) -> None:
    """Export date,community_count,is_sunday rows (Sunday markers for plotting)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "community_count", "is_sunday"])
        for day in days:
            writer.writerow([day.date.isoformat(), day.community_count, int(day.is_sunday)])


def partition_dump(
    day: DayCommunities,
    municipality_filter: Iterable[str] | None = None,
) -> dict:
    """JSON-ready dump of one day's partition, optionally restricted to some municipalities."""
    keep = set(municipality_filter) if municipality_filter is not None else None
    modules = []
    if day.partition is not None:
        for module_id, members in sorted(day.partition.modules().items()):
            if keep is not None:
                members = [m for m in members if m in keep]
                if not members:
                    continue
            modules.append({"id": module_id, "municipalities": members})
    return {
        "date": day.date.isoformat(),
        "modules": modules,
        "codelength": None if day.partition is None else day.partition.codelength,
        "empty_day": day.empty_day,
    }


def write_partition_dumps(
    days: Sequence[DayCommunities],
    path: str | Path,
    municipality_filter: Iterable[str] | None = None,
) -> None:
    payload = [partition_dump(day, municipality_filter) for day in days]
    with Path(path).open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
