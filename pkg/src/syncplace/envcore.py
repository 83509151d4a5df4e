"""Joint synchronization + placement environment.

One step applies, in order: the placement decision (only every `tau` steps),
the budgeted neighbor syncs, reward evaluation on the post-sync perceived
graph, then world dynamics and counter aging.  The per-step action always
carries exactly the budgeted number of syncs; anything else is rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from . import knowledge, netmodel
from .knowledge import KnowledgeBase, placement_age_vector
from .netmodel import UNREACHABLE, DynamicsConfig, Topology

# Canonical flat action ordering, shared by every process that enumerates
# actions.  Stability of this order is part of the public contract.
ACTION_ORDER = (
    "Joint actions are ordered by sync subset first, site second: all "
    "size-B subsets of neighbor indices in lexicographic order, and within "
    "each subset the candidate site index ascending. "
    "flat_index = subset_rank * num_sites + site_index."
)


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class BudgetViolation(ValueError):
    """An action tried to sync more or fewer neighbors than the budget."""


@dataclass
class EnvConfig:
    budget_fraction: float = 0.28
    tau: int = 10
    mu: float = 1.0
    alpha: float = 2.0
    horizon: int = 500
    dt: int = 1
    staleness_cap: int = knowledge.DEFAULT_STALENESS_CAP
    unreachable_delay: float = None  # None: 10x generation-time diameter
    max_actions: int = 4096

    def validate(self):
        if not (0.0 < self.budget_fraction <= 1.0):
            raise ConfigError("env.budget_fraction must be in (0, 1]")
        if self.tau < 1:
            raise ConfigError("env.tau must be >= 1")
        if self.mu < 0:
            raise ConfigError("env.mu must be >= 0")
        if self.alpha < 0:
            raise ConfigError("env.alpha must be >= 0")
        if self.horizon < 1:
            raise ConfigError("env.horizon must be >= 1")
        if self.dt != 1:
            raise ConfigError("env.dt must be 1 (steps are the time unit)")
        if self.staleness_cap < 1:
            raise ConfigError("env.staleness_cap must be >= 1")
        if self.unreachable_delay is not None and self.unreachable_delay <= 0:
            raise ConfigError("env.unreachable_delay must be positive")


@dataclass(frozen=True)
class JointAction:
    """A budget-exact set of neighbor indices to sync plus a candidate-site
    index (the site part is ignored outside placement steps)."""

    sync_set: tuple
    place_site: int


@dataclass
class JointState:
    sync_part: tuple
    place_part: tuple

    def encode(self, cap: int) -> np.ndarray:
        """Flat agent input: both parts saturated at `cap` and scaled to [0, 1]."""
        vec = np.array(self.sync_part + self.place_part, dtype=np.float64)
        return np.minimum(vec, cap) / cap


@dataclass
class StepOutcome:
    next_state: JointState
    r_sync: float
    r_place: float
    r_total: float
    app_metrics: dict
    placement_applied: bool
    relocated: bool


def sync_budget(budget_fraction: float, num_neighbors: int) -> int:
    """Per-step sync budget: ceil(fraction * neighbors), at least 1."""
    return max(1, math.ceil(budget_fraction * num_neighbors))


def enumerate_actions(num_neighbors: int, b_sync: int, num_sites: int,
                      limit: int = 4096) -> list:
    """All joint actions in the canonical order (see ACTION_ORDER)."""
    if not (1 <= b_sync <= num_neighbors):
        raise ConfigError("sync budget must satisfy 1 <= B <= num_neighbors")
    if num_sites < 1:
        raise ConfigError("need at least one candidate site")
    count = math.comb(num_neighbors, b_sync) * num_sites
    if count > limit:
        raise ConfigError(
            f"action space has {count} entries (limit {limit}); use a smaller "
            "instance (fewer neighbors, sites, or a different budget)"
        )
    return [
        JointAction(subset, site)
        for subset in combinations(range(num_neighbors), b_sync)
        for site in range(num_sites)
    ]


def placement_reward(topo: Topology, controller_site: int, synced_controllers,
                     mu: float, unreachable_delay: float) -> float:
    """Inverse-delay placement reward at the current controller site.

    First term: inverse of the summed delay from the site to every switch of
    the focal domain.  Second term: mu times the inverse of the summed delay
    to the controllers synced this step.  Unreachable delays are replaced by
    the configured penalty; an empty sum contributes 0.
    """
    dist = netmodel.shortest_delays(topo, controller_site)

    def d(node):
        x = dist[node]
        return unreachable_delay if math.isinf(x) else x

    intra = sum(d(e) for e in topo.focal.switches if e != controller_site)
    inter = sum(d(c) for c in synced_controllers)
    reward = 0.0
    if intra > 0:
        reward += 1.0 / intra
    if inter > 0:
        reward += mu / inter
    return reward


class SyncPlaceEnv:
    """The joint MDP.  One instance is strictly sequential; independent
    instances with independent seeds may run concurrently.

    The episode clock `t` drives the placement gating and the horizon; the
    world clock `world_t` keys the dynamics draw and keeps advancing across
    episodes, so the world keeps evolving while the agent's counters reset.
    """

    def __init__(self, topology: Topology, cfg: EnvConfig, dynamics: DynamicsConfig,
                 app=None):
        cfg.validate()
        netmodel.validate_topology(topology)
        self.cfg = cfg
        self.dynamics = dynamics
        self.app = app
        self.truth = topology
        self.neighbor_ids = topology.neighbor_domains()
        self.num_neighbors = len(self.neighbor_ids)
        if self.num_neighbors < 1:
            raise ConfigError("need at least one neighbor domain")
        self.sites = topology.focal.candidate_sites
        self.num_sites = len(self.sites)
        self.b_sync = sync_budget(cfg.budget_fraction, self.num_neighbors)
        self.actions = enumerate_actions(self.num_neighbors, self.b_sync,
                                         self.num_sites, cfg.max_actions)
        self.action_index = {a: i for i, a in enumerate(self.actions)}
        if cfg.unreachable_delay is None:
            dia = netmodel.diameter(topology)
            self.unreachable_delay = 10.0 * dia if dia > 0 else 10.0
        else:
            self.unreachable_delay = cfg.unreachable_delay
        self.site_index = self.sites.index(topology.focal.controller_site)
        self.kb = KnowledgeBase.from_truth(topology, 0)
        self.age = 0
        self.t = 0
        self.world_t = 0

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def state_dim(self) -> int:
        return self.num_neighbors + self.num_sites

    @property
    def controller_node(self) -> int:
        return self.sites[self.site_index]

    def state(self) -> JointState:
        cap = self.cfg.staleness_cap
        return JointState(
            self.kb.staleness_vector(cap),
            placement_age_vector(self.num_sites, self.site_index,
                                 min(self.age, cap)),
        )

    def reset(self) -> JointState:
        """Start a fresh episode: snapshots refreshed, all counters zeroed.

        The world itself (topology and world clock) is left alone; episodes
        are truncations of one continuing task.
        """
        self.kb = KnowledgeBase.from_truth(self.truth, self.world_t)
        self.age = 0
        self.t = 0
        return self.state()

    def _relocate(self, site_index: int) -> None:
        node = self.sites[site_index]
        domains = tuple(
            replace(d, controller_site=node) if d.id == self.truth.focal_domain else d
            for d in self.truth.domains
        )
        self.truth = replace(self.truth, domains=domains)
        self.site_index = site_index

    def step(self, action: JointAction) -> StepOutcome:
        if len(set(action.sync_set)) != self.b_sync:
            raise BudgetViolation(
                f"action must sync exactly {self.b_sync} neighbors, "
                f"got {len(set(action.sync_set))}"
            )
        if any(not (0 <= i < self.num_neighbors) for i in action.sync_set):
            raise ValueError(f"sync index out of range in {action.sync_set}")
        if not (0 <= action.place_site < self.num_sites):
            raise ValueError(f"place_site {action.place_site} out of range")

        # 1. placement, gated to every tau-th step of the episode
        placement_applied = (self.t % self.cfg.tau == 0)
        relocated = False
        if placement_applied and action.place_site != self.site_index:
            self._relocate(action.place_site)
            self.age = 0
            relocated = True

        # 2. budgeted syncs
        for idx in sorted(action.sync_set):
            self.kb = self.kb.sync(self.truth, self.neighbor_ids[idx], self.world_t)

        # 3. application reward on the post-sync perceived graph
        perceived = self.kb.perceived_global_graph(self.truth)
        r_sync, metrics = self.app.evaluate(perceived, self.truth)

        # 4. placement reward at the current site, restricted to this step's syncs
        synced_controllers = [
            self.truth.domain(self.neighbor_ids[i]).controller_site
            for i in sorted(action.sync_set)
        ]
        r_place = placement_reward(self.truth, self.controller_node,
                                   synced_controllers, self.cfg.mu,
                                   self.unreachable_delay)

        # 5. joint reward
        r_total = r_sync * (self.cfg.alpha + r_place)

        # 6. world advances, counters age
        self.truth = netmodel.step_dynamics(self.truth, self.dynamics, self.world_t)
        self.kb = self.kb.advance_staleness()
        self.age += 1
        self.t += 1
        self.world_t += 1

        return StepOutcome(self.state(), r_sync, r_place, r_total, metrics,
                           placement_applied, relocated)


class EpisodeStats:
    """Accumulates step outcomes into one per-episode record."""

    def __init__(self):
        self.steps = 0
        self.r_sync = 0.0
        self.r_place = 0.0
        self.r_total = 0.0
        self.relocations = 0
        self.metrics = {}

    def add(self, outcome: StepOutcome) -> None:
        self.steps += 1
        self.r_sync += outcome.r_sync
        self.r_place += outcome.r_place
        self.r_total += outcome.r_total
        self.relocations += int(outcome.relocated)
        for key, val in outcome.app_metrics.items():
            self.metrics[key] = self.metrics.get(key, 0.0) + val

    def record(self, episode: int, phase: str, p_explore: float) -> dict:
        n = max(self.steps, 1)
        rec = {
            "episode": episode,
            "phase": phase,
            "p_explore": p_explore,
            "r_sync_mean": self.r_sync / n,
            "r_sync_sum": self.r_sync,
            "r_place_mean": self.r_place / n,
            "r_place_sum": self.r_place,
            "r_total_mean": self.r_total / n,
            "r_total_sum": self.r_total,
            "relocations": self.relocations,
        }
        for key, val in self.metrics.items():
            rec[key] = val / n
        return rec
