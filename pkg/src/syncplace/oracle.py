"""Independent brute-force references used by the test suite.

None of these reuse the production shortest-path or backprop code: paths
are enumerated exhaustively, gradients come from central differences, and
the best action is found by stepping a cloned environment through every
candidate.
"""

from __future__ import annotations

import copy
import math

import numpy as np

from .envcore import SyncPlaceEnv
from .netmodel import Topology

BRUTE_NODE_LIMIT = 10


def brute_shortest_path(topo: Topology, a: int, b: int) -> float:
    """Minimum summed delay over all simple live paths, by full enumeration.

    Refuses graphs above BRUTE_NODE_LIMIT nodes.  Sums run from `a` outward
    so costs are bit-identical to a relaxation-based computation.
    """
    n = len(topo.nodes)
    if n > BRUTE_NODE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_NODE_LIMIT} nodes, got {n}")
    if a == b:
        return 0.0
    adj = [[] for _ in range(n)]
    for lnk in topo.links:
        if lnk.up:
            adj[lnk.u].append((lnk.v, lnk.delay))
            adj[lnk.v].append((lnk.u, lnk.delay))

    best = math.inf
    visited = [False] * n
    visited[a] = True

    def walk(u, cost):
        nonlocal best
        if cost >= best:
            return
        for v, w in adj[u]:
            if visited[v]:
                continue
            nc = cost + w
            if v == b:
                if nc < best:
                    best = nc
                continue
            visited[v] = True
            walk(v, nc)
            visited[v] = False

    walk(a, 0.0)
    return best


def brute_best_action(env: SyncPlaceEnv):
    """Exhaustively evaluate every joint action from the current snapshot.

    Each candidate steps an identical clone; the dynamics draw is keyed on
    the world clock, so all candidates face the same stochastic future.
    Returns (flat action index, one-step joint reward); ties go to the
    lowest index.
    """
    best_idx = None
    best_reward = -math.inf
    for i, action in enumerate(env.actions):
        clone = copy.deepcopy(env)
        outcome = clone.step(action)
        if outcome.r_total > best_reward:
            best_reward = outcome.r_total
            best_idx = i
    return best_idx, best_reward


def finite_diff_grad(net, states, actions, targets, perturbation: float = 1e-5):
    """Central-difference gradient of the batch TD loss for every parameter.

    The loss mirrors the training loss: mean over the batch of
    (target - Q(s, a))^2, evaluated through forward passes only.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)

    def loss():
        q = net.forward(states)
        taken = q[np.arange(len(actions)), actions]
        return float(np.mean((targets - taken) ** 2))

    grads = []
    for param in net.parameters():
        grad = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + perturbation
            hi = loss()
            param[idx] = orig - perturbation
            lo = loss()
            param[idx] = orig
            grad[idx] = (hi - lo) / (2.0 * perturbation)
            it.iternext()
        grads.append(grad)
    return grads
