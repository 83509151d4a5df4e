"""Non-learning comparison policies: round robin and random allocation.

Both emit budget-exact joint actions, so the environment never rejects
them.  Placement moves only at placement steps, matching what the
environment would apply anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envcore import JointAction, SyncPlaceEnv


@dataclass
class RoundRobinState:
    sync_cursor: int = 0
    place_cursor: int = 0


def round_robin_action(state: RoundRobinState, b_sync: int, num_neighbors: int,
                       num_sites: int, t: int, tau: int) -> JointAction:
    """Next cyclic allocation: B neighbors from the sync cursor, and at each
    placement step the next candidate site.  Advances the cursors."""
    sync = tuple(sorted((state.sync_cursor + i) % num_neighbors
                        for i in range(b_sync)))
    state.sync_cursor = (state.sync_cursor + b_sync) % num_neighbors
    if t % tau == 0:
        state.place_cursor = (state.place_cursor + 1) % num_sites
    return JointAction(sync, state.place_cursor)


def random_action(rng, b_sync: int, num_neighbors: int, num_sites: int) -> JointAction:
    """Uniform random budget-exact subset and uniform random site."""
    subset = tuple(sorted(int(i) for i in rng.choice(num_neighbors, b_sync,
                                                     replace=False)))
    return JointAction(subset, int(rng.integers(num_sites)))


class RoundRobinPolicy:
    def __init__(self, env: SyncPlaceEnv):
        self.env = env
        self.state = RoundRobinState()

    def act(self) -> JointAction:
        env = self.env
        return round_robin_action(self.state, env.b_sync, env.num_neighbors,
                                  env.num_sites, env.t, env.cfg.tau)


class RandomPolicy:
    """Uniform random sync subsets every step; the site is re-randomized only
    at placement steps and repeated in between."""

    def __init__(self, env: SyncPlaceEnv, rng):
        self.env = env
        self.rng = rng

    def act(self) -> JointAction:
        env = self.env
        action = random_action(self.rng, env.b_sync, env.num_neighbors,
                               env.num_sites)
        if env.t % env.cfg.tau != 0:
            action = JointAction(action.sync_set, env.site_index)
        return action


class GreedyPolicy:
    """Plays the argmax action of a frozen Q-network."""

    def __init__(self, env: SyncPlaceEnv, net):
        self.env = env
        self.net = net

    def act(self) -> JointAction:
        state = self.env.state().encode(self.env.cfg.staleness_cap)
        return self.env.actions[int(np.argmax(self.net.forward(state)))]
