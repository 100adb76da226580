"""Independent reference implementations used as test oracles.

Everything here is written as directly as possible from the definitions and
stays independent of the library code paths it checks: brute-force scans,
dense linear algebra, exhaustive enumeration, straight-line formulas.
"""

import math

import numpy as np

from mobflow.ingest import Trip


def trips_bruteforce(events, dwell_threshold=3600):
    """Quadratic trip extraction: evaluate every consecutive pair independently."""
    out = []
    for i in range(len(events) - 1):
        a, b = events[i], events[i + 1]
        if a.municipality_id == b.municipality_id:
            continue
        dwell = None
        for later in events[i + 2:]:
            if later.municipality_id != b.municipality_id:
                dwell = later.timestamp - b.timestamp
                break
        if dwell is None or dwell >= dwell_threshold:
            out.append(
                Trip(a.user_id, a.municipality_id, b.municipality_id, a.timestamp, b.timestamp)
            )
    return out


def entropy_direct(counts, n):
    """Normalized Shannon entropy by direct summation; None for zero flow."""
    total = sum(counts)
    if total == 0:
        return None
    acc = 0.0
    for c in counts:
        if c:
            p = c / total
            acc += p * math.log(p)
    return -acc / math.log(n)


def stationary_dense(g, tau=0.15):
    """Stationary distribution of the teleporting chain by dense linear solve."""
    nodes = sorted(g.nodes)
    index = {node: i for i, node in enumerate(nodes)}
    n = len(nodes)
    P = np.zeros((n, n))
    out_w = np.zeros(n)
    for (u, v), w in g.edges.items():
        out_w[index[u]] += w
    for (u, v), w in g.edges.items():
        P[index[u], index[v]] = w / out_w[index[u]]
    for i in range(n):
        if out_w[i] == 0.0:
            P[i, :] = 1.0 / n
    chain = (1.0 - tau) * P + tau / n
    A = chain.T - np.eye(n)
    A[-1, :] = 1.0  # replace one redundant equation with the normalization
    b = np.zeros(n)
    b[-1] = 1.0
    p = np.linalg.solve(A, b)
    return {node: p[index[node]] for node in nodes}


def map_equation_entropy_form(assignment, flow):
    """Two-level map equation written literally as q*H(Q) + sum p_i*H(P_i), in bits."""

    def H(probs):
        return -sum(p * math.log2(p) for p in probs if p > 0.0)

    modules = sorted(set(assignment.values()))
    exit_flow = {m: 0.0 for m in modules}
    member_rates = {m: [] for m in modules}
    for node, p in flow.visit_rates.items():
        member_rates[assignment[node]].append(p)
    for (u, v), q in flow.edge_flows.items():
        if u != v and assignment[u] != assignment[v]:
            exit_flow[assignment[u]] += q
    total_exit = sum(exit_flow.values())
    length = 0.0
    if total_exit > 0.0:
        length += total_exit * H([exit_flow[m] / total_exit for m in modules])
    for m in modules:
        circulation = exit_flow[m] + sum(member_rates[m])
        if circulation > 0.0:
            probs = [exit_flow[m] / circulation] + [p / circulation for p in member_rates[m]]
            length += circulation * H(probs)
    return length


def set_partitions(items):
    """Every partition of `items`, enumerated via restricted growth strings."""
    n = len(items)
    if n == 0:
        return
    a = [0] * n
    while True:
        groups = {}
        for i, label in enumerate(a):
            groups.setdefault(label, []).append(items[i])
        yield list(groups.values())
        for i in range(n - 1, 0, -1):
            if a[i] <= max(a[:i]):
                a[i] += 1
                for j in range(i + 1, n):
                    a[j] = 0
                break
        else:
            return


def exhaustive_min_codelength(flow, map_equation):
    """Global map-equation minimum by scoring every partition of the node set."""
    nodes = sorted(flow.visit_rates)
    best_length, best_assignment = math.inf, None
    for groups in set_partitions(nodes):
        assignment = {}
        for label, group in enumerate(groups):
            for node in group:
                assignment[node] = label
        length = map_equation(assignment, flow)
        if length < best_length:
            best_length, best_assignment = length, assignment
    return best_length, best_assignment


def random_flow_graph(rng, n, density=0.45, max_weight=10):
    """Random weighted digraph on n nodes; may contain dangling/isolated nodes."""
    nodes = [f"n{i}" for i in range(n)]
    edges = {}
    for u in range(n):
        for v in range(n):
            if u != v and rng.random() < density:
                edges[(nodes[u], nodes[v])] = float(rng.integers(1, max_weight))
    return nodes, edges
