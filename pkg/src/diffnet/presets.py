"""Built-in scenarios used by the test-suite, the docs, and the CLI examples.

`merge_scenario` is the two-origin merge benchmark whose gradient table is
pinned in the acceptance tests.  `two_route_scenario` is a fast-route /
slow-route network with a capacity bottleneck on the fast branch.
`toll_grid_scenario` is a many-corridor network with per-period tolls on
every corridor entry link, sized for the toll-optimization benchmarks.
`bottleneck_scenario` is a single link pair with an analytically solvable
queue, used to check virtual-vehicle tracing.
"""

from __future__ import annotations

from .scenario import Scenario

__all__ = [
    "merge_scenario",
    "two_route_scenario",
    "toll_grid_scenario",
    "bottleneck_scenario",
]


def merge_scenario() -> Scenario:
    """Two origins feeding a merge, single downstream link to the destination.

    All three links share u=20 m/s, qmax=0.8 veh/s, kappa=0.2 veh/m,
    d=1000 m, equal merge priorities.  Origin 1 sends 0.45 veh/s on
    [0, 1000) s; origin 2 sends 0.6 veh/s on [400, 1000) s, so the merge is
    oversaturated from t=400 until the queues clear.
    """
    return Scenario.from_dict(
        {
            "meta": {
                "dt": 5.0,
                "T_max": 2000.0,
                "dt_route": 25.0,
                "dt_toll": 2000.0,
                "mu": 0.0,
            },
            "nodes": [
                {"id": "orig1", "kind": "origin"},
                {"id": "orig2", "kind": "origin"},
                {"id": "merge", "kind": "intermediate"},
                {"id": "dest", "kind": "destination"},
            ],
            "links": [
                _lk("1", "orig1", "merge"),
                _lk("2", "orig2", "merge"),
                _lk("3", "merge", "dest"),
            ],
            "demands": [
                {"origin": "orig1", "destination": "dest",
                 "profile": [[0.0, 1000.0, 0.45]]},
                {"origin": "orig2", "destination": "dest",
                 "profile": [[400.0, 1000.0, 0.6]]},
            ],
        }
    )


def _lk(lid, tail, head, d=1000.0, u=20.0, qmax=0.8, kappa=0.2, alpha=1.0):
    return {"id": lid, "from": tail, "to": head, "d": d, "u": u,
            "qmax": qmax, "kappa": kappa, "alpha": alpha}


def two_route_scenario() -> Scenario:
    """Fast route with a downstream capacity bottleneck, slow route without.

    The fast route (fa -> fb) has free-flow time 125 s but only
    0.31 veh/s capacity on its second link; the slow route (sa -> sb) takes
    400 s at free flow with ample capacity.  Demand comes in three phases
    (0.2, 0.45, 0.1 veh/s); the middle phase oversaturates the bottleneck
    and a queue grows on the fast approach, yet the fast route stays below
    400 s so under deterministic route choice the slow route is never used.
    """
    return Scenario.from_dict(
        {
            "meta": {
                "dt": 5.0,
                "T_max": 2000.0,
                "dt_route": 25.0,
                "dt_toll": 2000.0,
                "mu": 0.0,
            },
            "nodes": [
                {"id": "orig", "kind": "origin"},
                {"id": "mid_f", "kind": "intermediate"},
                {"id": "mid_s", "kind": "intermediate"},
                {"id": "dest", "kind": "destination"},
            ],
            "links": [
                _lk("fa", "orig", "mid_f", d=2000.0, u=20.0, qmax=0.8),
                # 0.31 rather than a round fraction of the demand rates:
                # keeps the base point off flow-tie kinks so central FD is
                # well defined there
                _lk("fb", "mid_f", "dest", d=500.0, u=20.0, qmax=0.31),
                _lk("sa", "orig", "mid_s", d=2000.0, u=10.0, qmax=0.8),
                _lk("sb", "mid_s", "dest", d=2000.0, u=10.0, qmax=0.8),
            ],
            "demands": [
                {"origin": "orig", "destination": "dest",
                 "profile": [[0.0, 300.0, 0.2],
                             [300.0, 800.0, 0.45],
                             [800.0, 1100.0, 0.1]]},
            ],
        }
    )


def toll_grid_scenario(n_fast: int = 6, n_slow: int = 6) -> Scenario:
    """Parallel-corridor network for toll optimization under logit routing.

    One OD pair, `n_fast + n_slow` two-link corridors.  Fast corridors are
    short (100 s free flow) but capacity-limited on the exit link
    (0.1 veh/s); slow corridors take 160 s with ample capacity.  Every
    corridor entry link carries a per-period toll (all zero in the base
    scenario), giving (n_fast + n_slow) * 10 toll variables.  Demand
    oversaturates the combined fast capacity, so the logit equilibrium
    queues heavily on the fast corridors and pricing them yields a large
    travel-time improvement.
    """
    nodes = [{"id": "orig", "kind": "origin"},
             {"id": "dest", "kind": "destination"}]
    links = []
    tolls = []
    n_periods = 10
    for i in range(n_fast):
        mid = f"mf{i}"
        nodes.append({"id": mid, "kind": "intermediate"})
        links.append(_lk(f"f{i}a", "orig", mid, d=1000.0, u=20.0, qmax=0.6))
        links.append(_lk(f"f{i}b", mid, "dest", d=1000.0, u=20.0, qmax=0.1))
        tolls.append({"link": f"f{i}a", "values": [0.0] * n_periods})
    for i in range(n_slow):
        mid = f"ms{i}"
        nodes.append({"id": mid, "kind": "intermediate"})
        links.append(_lk(f"s{i}a", "orig", mid, d=1000.0, u=12.5, qmax=0.6))
        links.append(_lk(f"s{i}b", mid, "dest", d=1000.0, u=12.5, qmax=0.6))
        tolls.append({"link": f"s{i}a", "values": [0.0] * n_periods})
    return Scenario.from_dict(
        {
            "meta": {
                "dt": 5.0,
                "T_max": 500.0,
                "dt_route": 25.0,
                "dt_toll": 50.0,
                "mu": 0.02,
            },
            "nodes": nodes,
            "links": links,
            "demands": [
                {"origin": "orig", "destination": "dest",
                 "profile": [[0.0, 300.0, 1.5]]},
            ],
            "tolls": tolls,
        }
    )


def bottleneck_scenario(rate: float = 0.6, t_on: float = 0.0,
                        t_off: float = 500.0) -> Scenario:
    """Feeder link into a half-capacity exit link: a textbook point queue.

    With inflow `rate` exceeding the 0.3 veh/s exit capacity, the queue at
    the junction grows at (rate - 0.3) veh/s while demand lasts, and the
    delay of a vehicle entering at time t has the closed form of the
    deterministic queueing triangle.
    """
    return Scenario.from_dict(
        {
            "meta": {
                "dt": 5.0,
                "T_max": 2000.0,
                "dt_route": 50.0,
                "dt_toll": 2000.0,
                "mu": 0.0,
            },
            "nodes": [
                {"id": "orig", "kind": "origin"},
                {"id": "junction", "kind": "intermediate"},
                {"id": "dest", "kind": "destination"},
            ],
            "links": [
                _lk("feed", "orig", "junction", d=2000.0, u=20.0, qmax=0.8),
                _lk("exit", "junction", "dest", d=500.0, u=20.0, qmax=0.3),
            ],
            "demands": [
                {"origin": "orig", "destination": "dest",
                 "profile": [[t_on, t_off, rate]]},
            ],
        }
    )
