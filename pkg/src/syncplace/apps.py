"""Application-level synchronization rewards: shortest-path routing quality
and load-balancing capacity loss.

Both applications score how well decisions taken on the stale perceived
graph hold up against ground truth.  Reported metrics (detection rate, raw
capacity loss) are independent of the reward scaling knobs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import netmodel
from .envcore import ConfigError
from .netmodel import Topology


@dataclass
class SprConfig:
    # None scales the reward by 1/evaluated-pairs, making it equal the
    # detection rate.
    k: float = None
    pair_universe: str = "focal_external"

    def validate(self):
        if self.k is not None and self.k <= 0:
            raise ConfigError("application.k must be positive")
        if self.pair_universe != "focal_external":
            raise ConfigError(
                f"unknown pair_universe {self.pair_universe!r}; "
                "only 'focal_external' is supported"
            )


@dataclass
class LbConfig:
    capacity_reference: float = 10.0

    def validate(self):
        if self.capacity_reference <= 0:
            raise ConfigError("application.capacity_reference must be positive")


@dataclass
class SprDetection:
    detect_count: int
    evaluated: int
    excluded: int
    rate: float


def build_pairs(topo: Topology, rule: str = "focal_external") -> list:
    """Routing pairs to score: every (focal switch, external switch) pair."""
    if rule != "focal_external":
        raise ConfigError(f"unknown pair_universe {rule!r}")
    focal = set(topo.focal.switches)
    external = [n for n in topo.nodes if n not in focal]
    return [(s, t) for s in sorted(focal) for t in external]


def spr_detect(perceived: Topology, truth: Topology, pairs) -> SprDetection:
    """Count pairs whose perceived-optimal route survives on the true graph.

    A pair is detected when the minimum-delay path on the perceived graph
    (lexicographic tie-break) uses only live true links and its true cost
    equals the true shortest-path cost.  Pairs whose destination is
    unreachable in truth are excluded from the denominator.
    """
    if not pairs:
        raise ConfigError("pair list must be nonempty")
    by_source = {}
    for s, t in pairs:
        by_source.setdefault(s, []).append(t)

    true_links = {l.key(): l for l in truth.links}
    detected = 0
    evaluated = 0
    excluded = 0
    for s, targets in by_source.items():
        _, perc_paths = netmodel.shortest_paths_lex(perceived, s)
        true_dist = netmodel.shortest_delays(truth, s)
        for t in targets:
            if math.isinf(true_dist[t]):
                excluded += 1
                continue
            evaluated += 1
            path = perc_paths[t]
            if path is None:
                continue
            cost = 0.0
            alive = True
            for u, v in zip(path, path[1:]):
                lnk = true_links[(u, v) if u < v else (v, u)]
                if not lnk.up:
                    alive = False
                    break
                cost += lnk.delay
            if alive and cost == true_dist[t]:
                detected += 1
    rate = detected / evaluated if evaluated else 1.0
    return SprDetection(detected, evaluated, excluded, rate)


def spr_reward(detect_count: int, k: float) -> float:
    """Reward proportional to the number of correctly detected paths."""
    if detect_count < 0:
        raise ValueError("detect_count must be >= 0")
    return k * detect_count


def lb_loss(perceived: Topology, truth: Topology):
    """Capacity lost by sending the task to the perceived-best server.

    Returns (loss, perceived_best, actual_best); arg-maxes break ties toward
    the lowest node id over the global server pool.
    """

    def best_server(topo):
        best_node = None
        best_cap = -math.inf
        for d in sorted(topo.domains, key=lambda d: d.id):
            for node in sorted(d.servers):
                cap = d.servers[node]
                if cap > best_cap:
                    best_cap = cap
                    best_node = node
        return best_node

    perceived_best = best_server(perceived)
    actual_best = best_server(truth)
    if perceived_best is None or actual_best is None:
        raise ConfigError("load balancing needs at least one server")

    true_caps = {}
    for d in truth.domains:
        true_caps.update(d.servers)
    loss = true_caps[actual_best] - true_caps[perceived_best]
    return loss, perceived_best, actual_best


def lb_reward(loss: float, cfg: LbConfig) -> float:
    """Nonnegative training reward: reference capacity minus the loss."""
    return cfg.capacity_reference - loss


class ShortestPathRoutingApp:
    """Scores each step by the fraction of routing pairs whose stale-view
    shortest path is still valid and optimal."""

    metric_key = "spr_detect_rate"

    def __init__(self, pairs, cfg: SprConfig = None):
        self.cfg = cfg or SprConfig()
        self.cfg.validate()
        self.pairs = list(pairs)
        if not self.pairs:
            raise ConfigError("pair list must be nonempty")

    def evaluate(self, perceived: Topology, truth: Topology):
        det = spr_detect(perceived, truth, self.pairs)
        if self.cfg.k is None:
            reward = det.rate
        else:
            reward = spr_reward(det.detect_count, self.cfg.k)
        return reward, {"spr_detect_rate": det.rate}


class LoadBalancingApp:
    """Scores each step by the capacity difference between the true best
    server and the one the stale view would pick."""

    metric_key = "lb_loss"

    def __init__(self, cfg: LbConfig = None):
        self.cfg = cfg or LbConfig()
        self.cfg.validate()

    def evaluate(self, perceived: Topology, truth: Topology):
        loss, _, _ = lb_loss(perceived, truth)
        return lb_reward(loss, self.cfg), {"lb_loss": loss}
