import math
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest

import iterlog
from iterlog._lattice import (
    RFiltration,
    certify_weight_filtration,
    filtration_to_json,
    find_wall_point,
    is_paracomplemented,
)
from tests import (
    brute_hn_chains,
    brute_paracomplemented,
    brute_weight_filtration,
    grading_is_optimal,
    random_dag,
)
from tests.conftest import chamber_points


def two_vertex_graph():
    graph = nx.DiGraph()
    graph.add_node("a", mass=1)
    graph.add_node("b", mass=2)
    graph.add_edge("a", "b")
    return graph


def square(values):
    return tuple(Fraction(v) for v in values)


def _seeds(fast, total):
    return [s if s < fast else pytest.param(s, marks=pytest.mark.slow) for s in range(total)]


def table(n, pairs):
    """Reflexive-transitive closure of ``pairs`` as a boolean order matrix."""
    leq = np.eye(n, dtype=bool)
    for a, b in pairs:
        leq[a, b] = True
    for k in range(n):
        leq |= leq[:, [k]] & leq[[k], :]
    return leq


def test_closed_subsets_of_an_arrow():
    pl = iterlog.build_ideal_lattice(two_vertex_graph())
    lattice = pl.lattice
    assert lattice.size == 3
    assert [lattice.label(x) for x in lattice.elements] == ["{}", "{b}", "{a,b}"]
    assert lattice.element(["b"]) == 1
    with pytest.raises(iterlog.DomainError, match="not closed"):
        lattice.element(["a"])


def test_weight_filtration_of_an_arrow():
    pl = iterlog.build_ideal_lattice(two_vertex_graph())
    f = iterlog.weight_filtration(pl)
    assert f.chain == (0, 1, 2)
    assert f.labels == (Fraction(-1, 3), Fraction(2, 3))
    assert certify_weight_filtration(pl, f)
    assert filtration_to_json(pl, f) == {
        "chain": ["{}", "{b}", "{a,b}"],
        "labels": ["-1/3", "2/3"],
    }

    grading = iterlog.weight_grading(two_vertex_graph())
    assert grading.weights == {"a": Fraction(2, 3), "b": Fraction(-1, 3)}
    assert grading.tight == {("a", "b")}


def test_iterated_weight_filtration_of_an_arrow():
    pl = iterlog.build_ideal_lattice(two_vertex_graph())
    f = iterlog.iterated_weight_filtration(pl)
    assert f.chain == (0, 1, 2)
    assert f.labels == (
        iterlog.IteratedLabel((Fraction(-1, 3),)),
        iterlog.IteratedLabel((Fraction(2, 3),)),
    )
    assert f.depth == 1


@pytest.mark.parametrize(
    ["imag", "chain", "labels", "semistable"],
    [
        ((1, 0), (0, 2), (math.atan(0.5),), True),
        ((0, 1), (0, 1, 2), (math.atan(1.0), 0.0), False),
    ],
)
def test_harder_narasimhan_of_an_arrow(imag, chain, labels, semistable):
    lattice = iterlog.SubsetLattice(two_vertex_graph())
    pl = iterlog.PolarizedLattice(lattice, iterlog.Polarization(square((1, 1)), square(imag)))
    f = iterlog.harder_narasimhan(pl)
    assert f.chain == chain
    assert f.labels == pytest.approx(labels)
    assert iterlog.is_semistable(pl) is semistable


def test_polystable_needs_complemented_phase_sublattice():
    boolean = nx.DiGraph()
    boolean.add_nodes_from([(v, {"mass": 1}) for v in "xyz"])
    assert iterlog.is_polystable(iterlog.build_ideal_lattice(boolean))

    chain = iterlog.build_ideal_lattice(two_vertex_graph())
    assert iterlog.is_semistable(chain)
    assert not iterlog.is_polystable(chain)


def test_complemented_lattice_has_trivial_weight_filtration():
    boolean = nx.DiGraph()
    boolean.add_nodes_from([(v, {"mass": m}) for v, m in zip("xyz", (1, 2, 3))])
    pl = iterlog.build_ideal_lattice(boolean)
    f = iterlog.weight_filtration(pl)
    assert f.chain == (pl.lattice.bottom, pl.lattice.top)
    assert f.labels == (0,)


@pytest.mark.parametrize("seed", _seeds(12, 200))
def test_harder_narasimhan_is_the_unique_decreasing_semistable_chain(seed):
    rng = np.random.default_rng(seed)
    graph = random_dag(rng, int(rng.integers(2, 6)))
    lattice = iterlog.SubsetLattice(graph)
    real = square(int(x) for x in rng.integers(1, 4, lattice.class_count))
    imag = square(int(x) for x in rng.integers(-3, 4, lattice.class_count))
    pl = iterlog.PolarizedLattice(lattice, iterlog.Polarization(real, imag))

    chains = brute_hn_chains(pl)
    assert len(chains) == 1
    f = iterlog.harder_narasimhan(pl)
    assert f.chain == chains[0]
    assert all(x > y for x, y in zip(f.labels, f.labels[1:]))


@pytest.mark.parametrize("seed", _seeds(12, 200))
def test_weight_grading_solves_the_quadratic_program(seed):
    rng = np.random.default_rng(100 + seed)
    graph = random_dag(rng, int(rng.integers(2, 7)))
    pl = iterlog.build_ideal_lattice(graph)
    f = iterlog.weight_filtration(pl)

    assert brute_paracomplemented(pl.lattice, f)
    assert brute_weight_filtration(pl, f)
    assert is_paracomplemented(pl.lattice, f)
    total = sum(
        (Fraction(lam) * pl.charge(lo, hi)[0] for lo, hi, lam in f.steps()),
        Fraction(0),
    )
    assert total == 0

    grading = iterlog.weight_grading(graph)
    assert grading_is_optimal(graph, grading.weights)
    assert all(gap >= 1 for gap in grading.gaps.values())


def test_brute_force_rejects_a_shifted_filtration():
    pl = iterlog.build_ideal_lattice(two_vertex_graph())
    f = iterlog.weight_filtration(pl)
    assert brute_weight_filtration(pl, f)
    shifted = RFiltration(f.chain, tuple(x + Fraction(1, 10) for x in f.labels))
    assert not brute_weight_filtration(pl, shifted)
    # Balanced, but a gap below one needs a complemented interval.
    squeezed = RFiltration(f.chain, (Fraction(-1, 6), Fraction(1, 3)))
    assert brute_weight_filtration(pl, squeezed)
    assert not brute_paracomplemented(pl.lattice, squeezed)


@pytest.mark.parametrize(
    ["masses", "depth"],
    [
        ((1, 1, 1, 1, 1), 1),
        ((4, 2, 1, 1, 1), 1),
        ((3, 2, 1, 1, 1), 2),
        ((1, 1, 1, 4, 1), 2),
    ],
)
def test_iterated_weight_filtration_of_the_five_cycle(masses, depth):
    graph = iterlog.five_cycle(masses)
    pl = iterlog.build_ideal_lattice(graph.digraph())
    f = iterlog.iterated_weight_filtration(pl)
    assert f.depth == depth
    log_log = [label.coefficient(2) for label in f.labels]
    assert any(c != 0 for c in log_log) is (depth == 2)
    assert sum(
        (label.coefficient(1) * pl.charge(lo, hi)[0] for lo, hi, label in zip(f.chain, f.chain[1:], f.labels)),
        Fraction(0),
    ) == 0

    outer = iterlog.weight_filtration(pl)
    assert brute_weight_filtration(pl, outer)
    assert {label.coefficient(1) for label in f.labels} == set(outer.labels)


def test_middle_chamber_grading(middle_cycle):
    grading = iterlog.weight_grading(middle_cycle.digraph())
    assert [grading.weights[v] for v in range(1, 6)] == list(
        square(("1/2", -1, 0, 1, "-1/2"))
    )
    assert grading.tight == {(3, 2), (4, 3), (1, 5)}


def test_left_chamber_grading():
    graph = iterlog.five_cycle([4, 2, 1, 1, 1]).digraph()
    grading = iterlog.weight_grading(graph)
    assert [grading.weights[v] for v in range(1, 6)] == list(
        square(("2/9", "-7/9", "2/9", "11/9", "-7/9"))
    )
    assert grading.tight == {(1, 2), (3, 2), (4, 3), (1, 5)}
    assert grading_is_optimal(graph, grading.weights)


def test_cycle_arrows_follow_signs(middle_cycle):
    assert set(middle_cycle.digraph().edges) == {(1, 2), (3, 2), (4, 3), (4, 5), (1, 5)}
    assert [middle_cycle.arrow(k) for k in range(5)] == [(1, 2), (3, 2), (4, 3), (4, 5), (1, 5)]


@pytest.mark.parametrize(
    ["masses", "signs", "periodic", "match"],
    [
        ((1, 1), (1, 1), True, "both over and under"),
        ((1, 0), (1, -1), True, "positive"),
        ((1, 1, 1), (1,), True, "expected 3 signs"),
        ((1, 1), (2,), False, "signs must be"),
    ],
)
def test_oriented_cycle_validation(masses, signs, periodic, match):
    with pytest.raises(iterlog.DomainError, match=match):
        iterlog.OrientedCycleGraph(masses, signs, periodic)


@chamber_points
def test_walls_5cycle(masses, d1, d2, chamber):
    report = iterlog.walls_5cycle(masses)
    assert report.d1 == pytest.approx(d1)
    assert report.d2 == pytest.approx(d2)
    assert report.chamber is chamber


def test_walls_5cycle_needs_five_positive_masses():
    with pytest.raises(iterlog.DomainError, match="five segments"):
        iterlog.walls_5cycle([1, 1, 1, 1])
    with pytest.raises(iterlog.DomainError, match="positive"):
        iterlog.walls_5cycle([1, 1, 0, 1, 1])


@pytest.mark.parametrize(
    ["wall", "coordinate", "expected"],
    [
        (1, 1, (1, 4, 1, 1, 1)),
        (2, 3, (1, 1, 1, 4, 1)),
    ],
)
def test_find_wall_point(wall, coordinate, expected):
    point = find_wall_point([1, 1, 1, 1, 1], wall, coordinate)
    assert point == square(expected)
    assert iterlog.walls_5cycle(point).chamber.value == f"WALL{wall}"


def test_find_wall_point_needs_dependence():
    with pytest.raises(iterlog.DomainError, match="does not depend on coordinate 0"):
        find_wall_point([1, 1, 1, 1, 1], 1, 0)


def test_iterated_labels_order_by_growth():
    L = iterlog.IteratedLabel
    assert L((1,)) < L((1, 1))
    assert L((1, -1)) < L((1,))
    assert L((1, 5)) < L((2,))
    assert L((5,)) < L((0,), t=Fraction(1))
    assert L((1, 0, 0)) == L((1,))
    assert str(L((Fraction(1, 2), 1))) == "1/2 log t + 1 log log t"


def test_polarization_needs_positive_real_part():
    with pytest.raises(iterlog.DomainError, match="must be positive"):
        iterlog.Polarization(square((1, 0)), square((0, 0)))


def test_table_lattice_rejects_posets_without_joins():
    with pytest.raises(iterlog.NotALatticeError, match="no join"):
        iterlog.TableLattice(table(3, [(0, 1), (0, 2)]))


def test_table_lattice_rejects_the_pentagon():
    pentagon = table(5, [(0, 1), (1, 2), (2, 4), (0, 3), (3, 4)])
    with pytest.raises(iterlog.DomainError, match="modular"):
        iterlog.TableLattice(pentagon)


def test_diamond_lattice_is_modular_and_complemented():
    m3 = iterlog.TableLattice(table(5, [(0, 1), (0, 2), (0, 3), (1, 4), (2, 4), (3, 4)]))
    assert m3.birkhoff() is None
    assert m3.class_count == 1
    assert m3.length() == 2
    assert m3.is_complemented()
    pl = iterlog.PolarizedLattice(m3, iterlog.Polarization.real_valued([1]))
    f = iterlog.weight_filtration(pl)
    assert f.chain == (0, 4)
    assert f.labels == (0,)


def test_subset_lattice_enumeration_is_capped():
    graph = nx.DiGraph()
    graph.add_nodes_from(range(15))
    with pytest.raises(iterlog.LatticeTooLargeError) as e:
        iterlog.SubsetLattice(graph)
    assert e.value.limit == 2**14


def test_strongly_connected_components_move_together():
    graph = nx.DiGraph([("a", "b"), ("b", "a"), ("c", "a")])
    lattice = iterlog.SubsetLattice(graph)
    assert [lattice.label(x) for x in lattice.elements] == ["{}", "{a,b}", "{a,b,c}"]
    with pytest.raises(iterlog.DomainError, match="splits a cycle"):
        lattice.element(["a"])


@pytest.mark.parametrize(
    ["graph", "edges"],
    [
        (
            iterlog.five_cycle([1, 2, 3, 4, 5]),
            {(1, 2), (3, 2), (4, 3), (4, 5), (1, 5)},
        ),
        (
            iterlog.OrientedCycleGraph((1, 1, 1), (1, -1), periodic=False),
            {(1, 2), (3, 2)},
        ),
    ],
)
def test_cycle_graph_digraph_orients_arrows_by_sign(graph, edges):
    digraph = iterlog.cycle_graph_digraph(graph)
    assert set(digraph.edges) == edges
    assert [digraph.nodes[k]["mass"] for k in digraph] == list(graph.masses)
