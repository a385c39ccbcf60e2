import itertools
from fractions import Fraction

import networkx as nx
import numpy as np
from scipy import optimize


def random_dag(rng, n, p=0.4, max_mass=4):
    # Arrows only go from lower to higher index, so the graph is acyclic.
    graph = nx.DiGraph()
    for v in range(n):
        graph.add_node(v, mass=Fraction(int(rng.integers(1, max_mass + 1))))
    for s, t in itertools.combinations(range(n), 2):
        if rng.random() < p:
            graph.add_edge(s, t)
    return graph


def all_chains(lattice):
    """Every strictly increasing chain from bottom to top."""

    def walk(prefix):
        current = prefix[-1]
        if current == lattice.top:
            yield tuple(prefix)
            return
        for x in lattice.elements:
            if x != current and lattice.leq(current, x):
                yield from walk(prefix + [x])

    yield from walk([lattice.bottom])


def brute_semistable(pl, a, b):
    whole = pl.slope(a, b)
    return all(
        pl.slope(a, x) <= whole
        for x in pl.lattice.elements
        if x != a and pl.lattice.leq(a, x) and pl.lattice.leq(x, b)
    )


def brute_hn_chains(pl):
    """Chains with semistable steps of strictly decreasing slope."""
    out = []
    for chain in all_chains(pl.lattice):
        steps = list(zip(chain, chain[1:]))
        slopes = [pl.slope(a, b) for a, b in steps]
        if all(brute_semistable(pl, a, b) for a, b in steps) and all(
            x > y for x, y in zip(slopes, slopes[1:])
        ):
            out.append(chain)
    return out


def brute_complemented(lattice, a, b):
    members = [x for x in lattice.elements if lattice.leq(a, x) and lattice.leq(x, b)]
    return all(
        any(lattice.meet(x, y) == a and lattice.join(x, y) == b for y in members)
        for x in members
    )


def brute_paracomplemented(lattice, f):
    n = len(f.labels)
    for k in range(1, n + 1):
        for j in range(k, n + 1):
            if f.labels[j - 1] - f.labels[k - 1] < 1:
                if not brute_complemented(lattice, f.chain[k - 1], f.chain[j]):
                    return False
    return True


def grading_is_optimal(graph, weights, tol=1e-9):
    """KKT check for min sum m r^2 subject to r_s - r_t >= 1 on every arrow.

    Multipliers live on tight arrows and must be nonnegative; they are
    recovered with NNLS and the stationarity residual must vanish.
    """
    nodes = list(graph.nodes)
    index = {v: i for i, v in enumerate(nodes)}
    r = np.array([float(weights[v]) for v in nodes])
    m = np.array([float(graph.nodes[v]["mass"]) for v in nodes])
    for s, t in graph.edges:
        if r[index[s]] - r[index[t]] < 1 - tol:
            return False
    tight = [(s, t) for s, t in graph.edges if abs(r[index[s]] - r[index[t]] - 1) < tol]
    if not tight:
        return bool(np.max(np.abs(m * r), initial=0.0) < tol)
    a = np.zeros((len(nodes), len(tight)))
    for j, (s, t) in enumerate(tight):
        a[index[s], j] += 1.0
        a[index[t], j] -= 1.0
    _, residual = optimize.nnls(a, m * r)
    return bool(residual < 1e-7)


def brute_weight_filtration(pl, f):
    """Build M(a, lambda) tuple by tuple and check it is semistable of phase 0.

    Tuples ``b_k`` in ``[a_{k-1}, a_k]`` are kept when ``[b_k, b_l]`` is
    complemented for every ``k < l`` with ``lambda_l - lambda_k <= 1``. The
    imaginary charge of ``[0, b]`` is ``sum_k lambda_k X([a_{k-1}, b_k])``.
    """
    lattice = pl.lattice
    chain, labels = f.chain, [Fraction(x) for x in f.labels]
    intervals = [
        [x for x in lattice.elements if lattice.leq(lo, x) and lattice.leq(x, hi)]
        for lo, hi in zip(chain, chain[1:])
    ]

    def imag(b):
        return sum(
            (lam * Fraction(pl.charge(lo, x)[0]) for lam, lo, x in zip(labels, chain, b)),
            Fraction(0),
        )

    for b in itertools.product(*intervals):
        admissible = all(
            brute_complemented(lattice, b[k], b[l])
            for k, l in itertools.combinations(range(len(b)), 2)
            if labels[l] - labels[k] <= 1
        )
        if admissible and imag(b) > 0:
            return False
    return imag(chain[1:]) == 0
