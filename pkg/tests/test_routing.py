"""Shortest paths, logit splits, diverge ratios, FIFO destination splits."""

import itertools
import math
import random

import pytest

from diffnet.adcore import Tape, value
from diffnet.ltm import LinkDyn
from diffnet.routing import (
    build_routing,
    diverge_ratios,
    fifo_split,
    turning_probs,
    travel_time_avg,
)
from diffnet.scenario import LinkParams


def make_link(tape, lid, tail, head, dests=("s",), **kw):
    p = dict(id=lid, tail=tail, head=head, d=1000.0, u=20.0, qmax=0.8,
             kappa=0.2, alpha=1.0)
    p.update(kw)
    return LinkDyn(tape, LinkParams(**p), list(dests))


# ----------------------------------------------------------------------
# shortest paths vs brute force


def random_graph(rng):
    n = rng.randint(3, 10)
    nodes = {f"n{i}": "intermediate" for i in range(n)}
    links = []
    weights = {}
    lid = 0
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < 0.4:
                links.append((f"n{i}", f"n{j}", f"e{lid}"))
                weights[f"e{lid}"] = rng.uniform(0.5, 10.0)
                lid += 1
    return nodes, links, weights


def brute_force_cost(nodes, links, weights, src, dest):
    """Cheapest path cost by enumerating all simple paths."""
    best = math.inf
    out = {}
    for tail, head, lid in links:
        out.setdefault(tail, []).append((head, lid))

    def walk(node, cost, seen):
        nonlocal best
        if cost >= best:
            return
        if node == dest:
            best = cost
            return
        for head, lid in out.get(node, []):
            if head not in seen:
                walk(head, cost + weights[lid], seen | {head})

    walk(src, 0.0, {src})
    return best


def test_bellman_ford_matches_brute_force_on_200_random_graphs():
    rng = random.Random(2024)
    for _ in range(200):
        nodes, raw_links, weights = random_graph(rng)
        tape = Tape()
        links = [make_link(tape, lid, tail, head)
                 for tail, head, lid in raw_links]
        dest = random.Random(rng.random()).choice(sorted(nodes))
        table = build_routing(tape, nodes, links, weights, [dest])
        for src in nodes:
            if src == dest:
                continue
            expect = brute_force_cost(nodes, raw_links, weights, src, dest)
            got = table.node_cost[dest][src]
            if math.isinf(expect):
                assert math.isinf(got)
            else:
                assert got == pytest.approx(expect, abs=1e-9)


def test_tree_cost_expressions_match_float_costs():
    rng = random.Random(5)
    for _ in range(20):
        nodes, raw_links, weights = random_graph(rng)
        tape = Tape()
        links = [make_link(tape, lid, tail, head)
                 for tail, head, lid in raw_links]
        wvars = {lid: tape.input(wv) for lid, wv in weights.items()}
        dest = sorted(nodes)[0]
        table = build_routing(tape, nodes, links, wvars, [dest])
        for n, cv in table.node_cost_var[dest].items():
            assert value(cv) == pytest.approx(table.node_cost[dest][n])


def test_deterministic_tie_breaks_to_lowest_link_id():
    tape = Tape()
    nodes = {"a": "intermediate", "b": "intermediate"}
    links = [make_link(tape, "e2", "a", "b"), make_link(tape, "e1", "a", "b")]
    table = build_routing(tape, nodes, links, {"e1": 3.0, "e2": 3.0}, ["b"])
    assert table.next_link["b"]["a"] == "e1"


# ----------------------------------------------------------------------
# turning probabilities


def two_route_table(tape, w1, w2, mu):
    nodes = {"a": "intermediate", "b": "intermediate"}
    links = [make_link(tape, "r1", "a", "b"), make_link(tape, "r2", "a", "b")]
    table = build_routing(tape, nodes, links, {"r1": w1, "r2": w2}, ["b"])
    return table, links


def test_logit_equal_costs_split_half_half():
    tape = Tape()
    table, links = two_route_table(tape, 10.0, 10.0, mu := 0.5)
    probs = turning_probs(tape, table, "a", links, "b", mu)
    assert value(probs["r1"]) == pytest.approx(0.5)
    assert value(probs["r2"]) == pytest.approx(0.5)


def test_logit_standard_ratio():
    # cost gap 1 with mu=1: shares 1/(1+e^-1) vs its complement
    tape = Tape()
    table, links = two_route_table(tape, 10.0, 11.0, mu := 1.0)
    probs = turning_probs(tape, table, "a", links, "b", mu)
    assert value(probs["r1"]) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)))


def test_logit_large_gap_saturates():
    tape = Tape()
    table, links = two_route_table(tape, 10.0, 10.0 + 40.0, mu := 0.5)
    # mu * gap = 20
    probs = turning_probs(tape, table, "a", links, "b", mu)
    assert value(probs["r1"]) >= 1.0 - 1e-8


def test_deterministic_indicator():
    tape = Tape()
    table, links = two_route_table(tape, 10.0, 11.0, 0.0)
    probs = turning_probs(tape, table, "a", links, "b", 0.0)
    assert probs == {"r1": 1.0, "r2": 0.0}


def test_logit_cost_gradients_nonzero_deterministic_zero():
    for mu, expect_nonzero in ((0.5, True), (0.0, False)):
        tape = Tape()
        w1 = tape.input(10.0)
        table, links = two_route_table(tape, w1, 12.0, mu)
        probs = turning_probs(tape, table, "a", links, "b", mu)
        g = tape.grad(probs["r1"], [w1]) if not isinstance(probs["r1"], float) \
            else [0.0]
        assert (abs(g[0]) > 1e-12) == expect_nonzero


# ----------------------------------------------------------------------
# diverge ratios and FIFO splits


def test_diverge_ratio_rows_sum_to_one():
    tape = Tape()
    nodes = {"a": "intermediate", "b": "intermediate", "c": "intermediate"}
    links = [
        make_link(tape, "ab", "a", "b", dests=("b", "c")),
        make_link(tape, "ac", "a", "c", dests=("b", "c")),
        make_link(tape, "bc", "b", "c", dests=("b", "c")),
    ]
    weights = {"ab": 5.0, "ac": 12.0, "bc": 5.0}
    table = build_routing(tape, nodes, links, weights, ["b", "c"])
    out_a = [lk for lk in links if lk.tail == "a"]
    beta = diverge_ratios(tape, table, "a", out_a,
                          {"b": 2.0, "c": 1.0}, mu=0.0)
    assert sum(value(x) for x in beta.values()) == pytest.approx(1.0)
    # all c-traffic goes via b (cost 10 < 12): ab gets everything
    assert value(beta["ab"]) == pytest.approx(1.0)


def test_fifo_split_proportional_to_composition():
    tape = Tape()
    lk = make_link(tape, "L", "a", "b", dests=("s1", "s2"))
    # upstream composition 75% s1 / 25% s2
    for _ in range(10):
        lk.update_boundaries(tape, 5.0, 0.8, 0.0,
                             {"s1": 0.6, "s2": 0.2}, {})
    split = fifo_split(tape, lk, 10, 0.4)
    assert value(split["s1"]) == pytest.approx(0.3)
    assert value(split["s2"]) == pytest.approx(0.1)


def test_fifo_split_empty_link_is_zero():
    tape = Tape()
    lk = make_link(tape, "L", "a", "b", dests=("s1", "s2"))
    split = fifo_split(tape, lk, 0, 0.0)
    assert split == {"s1": 0.0, "s2": 0.0}


def test_fifo_split_sums_to_aggregate():
    rng = random.Random(3)
    tape = Tape()
    lk = make_link(tape, "L", "a", "b", dests=("s1", "s2", "s3"))
    for _ in range(20):
        f = {s: rng.uniform(0.0, 0.25) for s in ("s1", "s2", "s3")}
        lk.update_boundaries(tape, 5.0, sum(f.values()), 0.0, f, {})
    agg = 0.37
    split = fifo_split(tape, lk, 20, agg)
    assert sum(value(x) for x in split.values()) == pytest.approx(agg)


def test_travel_time_avg_free_flow_on_empty_link():
    tape = Tape()
    lk = make_link(tape, "L", "a", "b")
    assert value(travel_time_avg(tape, lk, 0)) == pytest.approx(50.0)
