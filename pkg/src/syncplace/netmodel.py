"""Multi-domain network model: topology, stochastic dynamics, and delays.

The network is a set of domains, each a group of switches run by one
controller.  Link liveness and server capacities evolve over time; link
delays and the node/domain structure are fixed at generation.  All values
here are immutable snapshots: `step_dynamics` returns a new topology rather
than mutating its input, so topologies can be shared freely.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

UNREACHABLE = math.inf

MAX_GENERATION_RETRIES = 64


class TopologyError(ValueError):
    """A topology violates a structural invariant."""


@dataclass(frozen=True)
class Link:
    """Undirected link with a fixed delay and a liveness flag.

    Endpoints are kept canonical (u < v); there is at most one link per
    node pair.
    """

    u: int
    v: int
    delay: float
    up: bool = True

    def key(self):
        return (self.u, self.v)


@dataclass
class Domain:
    """One controller's domain: its switches, candidate controller sites,
    the currently assigned site, and per-switch server capacities.

    capacity_volatility scales this domain's capacity walk; domains host
    different workloads, so their server churn can differ.
    """

    id: int
    switches: tuple
    candidate_sites: tuple
    controller_site: int
    servers: dict
    capacity_volatility: float = 1.0


@dataclass
class Topology:
    """The whole network at one instant."""

    nodes: tuple
    links: tuple
    domains: tuple
    focal_domain: int
    # lazy caches, never part of value identity
    _domain_index: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _adjacency_up: list = field(init=False, repr=False, compare=False, default=None)

    def domain_of(self, node: int) -> int:
        if self._domain_index is None:
            idx = np.empty(len(self.nodes), dtype=np.int64)
            for d in self.domains:
                for s in d.switches:
                    idx[s] = d.id
            self._domain_index = idx
        return int(self._domain_index[node])

    def domain(self, domain_id: int) -> Domain:
        for d in self.domains:
            if d.id == domain_id:
                return d
        raise KeyError(f"no domain {domain_id}")

    @property
    def focal(self) -> Domain:
        return self.domain(self.focal_domain)

    def neighbor_domains(self) -> tuple:
        """Ids of all non-focal domains, ascending (the neighbor order)."""
        return tuple(sorted(d.id for d in self.domains if d.id != self.focal_domain))

    def adjacency_up(self) -> list:
        """Adjacency over live links only: adj[u] = sorted [(v, delay), ...]."""
        if self._adjacency_up is None:
            adj = [[] for _ in self.nodes]
            for lnk in self.links:
                if lnk.up:
                    adj[lnk.u].append((lnk.v, lnk.delay))
                    adj[lnk.v].append((lnk.u, lnk.delay))
            for lst in adj:
                lst.sort()
            self._adjacency_up = adj
        return self._adjacency_up

    def link_map(self) -> dict:
        return {lnk.key(): lnk for lnk in self.links}


@dataclass
class GenerationConfig:
    num_domains: int = 7
    switches_range: tuple = (3, 15)
    link_density: float = 0.3
    delay_range: tuple = (1.0, 10.0)
    capacity_range: tuple = (0.0, 10.0)
    # per-domain capacity-walk scales: log-spaced across this range and
    # randomly permuted over the domains, so every network has both quiet
    # and churny domains; (1, 1) keeps the walk homogeneous
    capacity_volatility_range: tuple = (1.0, 1.0)
    num_candidate_sites: int = None  # None = every switch is a candidate site
    rng_seed: int = 0


@dataclass
class DynamicsConfig:
    link_flip_prob: float = 0.02
    capacity_step: float = 0.5
    capacity_bounds: tuple = (0.0, 10.0)
    rng_seed: int = 0


def validate_topology(topo: Topology) -> None:
    """Check every structural invariant; raise TopologyError on the first hit."""
    n = len(topo.nodes)
    if tuple(topo.nodes) != tuple(range(n)):
        raise TopologyError("node ids must be dense 0..N-1")
    seen = set()
    for d in topo.domains:
        for s in d.switches:
            if s in seen:
                raise TopologyError(f"node {s} belongs to more than one domain")
            seen.add(s)
    if seen != set(topo.nodes):
        raise TopologyError("domains must partition the node set")
    if topo.focal_domain not in {d.id for d in topo.domains}:
        raise TopologyError(f"focal domain {topo.focal_domain} does not exist")
    pairs = set()
    for lnk in topo.links:
        if lnk.u == lnk.v:
            raise TopologyError(f"self-loop at node {lnk.u}")
        if not (0 <= lnk.u < n and 0 <= lnk.v < n):
            raise TopologyError(f"link endpoint out of range: {lnk.key()}")
        if lnk.u > lnk.v:
            raise TopologyError(f"link endpoints not canonical: {lnk.key()}")
        if lnk.key() in pairs:
            raise TopologyError(f"duplicate link {lnk.key()}")
        pairs.add(lnk.key())
        if not lnk.delay > 0:
            raise TopologyError(f"link {lnk.key()} has non-positive delay")
    for d in topo.domains:
        if not d.candidate_sites:
            raise TopologyError(f"domain {d.id} has no candidate sites")
        sw = set(d.switches)
        if not set(d.candidate_sites) <= sw:
            raise TopologyError(f"domain {d.id}: candidate sites outside its switches")
        if d.controller_site not in d.candidate_sites:
            raise TopologyError(f"domain {d.id}: controller not at a candidate site")
        if not set(d.servers) <= sw:
            raise TopologyError(f"domain {d.id}: server node outside its switches")
        for node, cap in d.servers.items():
            if cap < 0:
                raise TopologyError(f"domain {d.id}: negative capacity at node {node}")
        if d.capacity_volatility < 0:
            raise TopologyError(f"domain {d.id}: negative capacity volatility")
    if not _connected_ignoring_liveness(topo):
        raise TopologyError("graph is not connected when all links are up")


def _connected_ignoring_liveness(topo: Topology) -> bool:
    n = len(topo.nodes)
    if n == 0:
        return False
    adj = [[] for _ in range(n)]
    for lnk in topo.links:
        adj[lnk.u].append(lnk.v)
        adj[lnk.v].append(lnk.u)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def generate_topology(cfg: GenerationConfig) -> Topology:
    """Build a random connected multi-domain topology, deterministic in rng_seed.

    Each domain gets a random spanning tree plus density-controlled extra
    links; a random tree over domains (plus extra cross links) connects the
    domains.  Retries a bounded number of times if connectivity fails.
    """
    lo, hi = cfg.switches_range
    if cfg.num_domains < 2:
        raise TopologyError("num_domains must be >= 2")
    if not (1 <= lo <= hi <= 64):
        raise TopologyError("switches_range must lie within [1, 64]")
    if not (0.0 <= cfg.link_density <= 1.0):
        raise TopologyError("link_density must be in [0, 1]")
    if not (0 < cfg.delay_range[0] <= cfg.delay_range[1]):
        raise TopologyError("delay_range must be positive and ordered")
    vlo, vhi = cfg.capacity_volatility_range
    if not (0 <= vlo <= vhi):
        raise TopologyError("capacity_volatility_range must be nonnegative and ordered")
    if vlo != vhi and vlo <= 0:
        raise TopologyError("heterogeneous capacity_volatility_range needs a positive minimum")

    rng = np.random.default_rng(cfg.rng_seed)
    for _ in range(MAX_GENERATION_RETRIES):
        topo = _build_topology(cfg, rng)
        if _connected_ignoring_liveness(topo):
            validate_topology(topo)
            return topo
    raise TopologyError(
        "could not generate a connected topology; raise link_density or domain sizes"
    )


def _build_topology(cfg: GenerationConfig, rng: np.random.Generator) -> Topology:
    dlo, dhi = cfg.delay_range
    sizes = [int(rng.integers(cfg.switches_range[0], cfg.switches_range[1] + 1))
             for _ in range(cfg.num_domains)]
    offsets = []
    total = 0
    for s in sizes:
        offsets.append(total)
        total += s

    vlo, vhi = cfg.capacity_volatility_range
    if vlo == vhi:
        volatilities = [vlo] * cfg.num_domains
    else:
        ladder = np.geomspace(vlo, vhi, cfg.num_domains)
        volatilities = [float(ladder[i]) for i in rng.permutation(cfg.num_domains)]

    links = {}

    def add_link(a, b):
        a, b = (a, b) if a < b else (b, a)
        if a == b or (a, b) in links:
            return
        links[(a, b)] = Link(a, b, float(rng.uniform(dlo, dhi)), True)

    # intra-domain: random spanning tree, then extra links by density
    for d in range(cfg.num_domains):
        off, size = offsets[d], sizes[d]
        for k in range(1, size):
            add_link(off + int(rng.integers(0, k)), off + k)
        for i in range(size):
            for j in range(i + 1, size):
                if (off + i, off + j) not in links and rng.random() < cfg.link_density:
                    add_link(off + i, off + j)

    # inter-domain: random tree over domains, then extra cross links
    def random_node(d):
        return offsets[d] + int(rng.integers(0, sizes[d]))

    for d in range(1, cfg.num_domains):
        other = int(rng.integers(0, d))
        add_link(random_node(d), random_node(other))
    for i in range(cfg.num_domains):
        for j in range(i + 1, cfg.num_domains):
            if rng.random() < cfg.link_density:
                add_link(random_node(i), random_node(j))

    domains = []
    for d in range(cfg.num_domains):
        off, size = offsets[d], sizes[d]
        switches = tuple(range(off, off + size))
        if cfg.num_candidate_sites is not None and cfg.num_candidate_sites < size:
            picked = rng.choice(size, cfg.num_candidate_sites, replace=False)
            sites = tuple(sorted(off + int(p) for p in picked))
        else:
            sites = switches
        controller = sites[int(rng.integers(0, len(sites)))]
        servers = {s: float(rng.uniform(*cfg.capacity_range)) for s in switches}
        domains.append(Domain(d, switches, sites, controller, servers,
                              volatilities[d]))

    return Topology(tuple(range(total)), tuple(links.values()), tuple(domains), 0)


def step_dynamics(topo: Topology, dyn: DynamicsConfig, t: int) -> Topology:
    """One step of the world: Bernoulli link flips and a bounded capacity walk.

    Pure function of (topo, dyn, t): the random draw is keyed on
    (dyn.rng_seed, t), so replaying a step from a cloned topology yields an
    identical outcome.  Draw order is fixed (links in list order, then
    servers in domain/node order) so the stream does not depend on outcomes.
    """
    rng = np.random.default_rng((dyn.rng_seed, t))
    flips = rng.random(len(topo.links))
    new_links = tuple(
        replace(lnk, up=not lnk.up) if flips[i] < dyn.link_flip_prob else lnk
        for i, lnk in enumerate(topo.links)
    )
    lo, hi = dyn.capacity_bounds
    new_domains = []
    for d in topo.domains:
        step = dyn.capacity_step * d.capacity_volatility
        servers = {}
        for node in sorted(d.servers):
            delta = float(rng.uniform(-step, step))
            servers[node] = min(max(d.servers[node] + delta, lo), hi)
        new_domains.append(replace(d, servers=servers))
    return replace(topo, links=new_links, domains=tuple(new_domains))


def shortest_delays(topo: Topology, source: int) -> list:
    """Minimum-delay distance from `source` to every node over live links.

    Unreachable nodes get UNREACHABLE (math.inf).
    """
    adj = topo.adjacency_up()
    dist = [UNREACHABLE] * len(topo.nodes)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def delay(topo: Topology, a: int, b: int) -> float:
    """Minimum-delay path cost between two nodes; UNREACHABLE if disconnected."""
    if a == b:
        return 0.0
    return shortest_delays(topo, a)[b]


def shortest_paths_lex(topo: Topology, source: int):
    """Single-source shortest paths with deterministic tie-breaking.

    Returns (dist, path) lists indexed by node; among equal-cost shortest
    paths the lexicographically smallest node sequence wins.  path[v] is a
    node tuple starting at `source`, or None when v is unreachable.
    """
    adj = topo.adjacency_up()
    n = len(topo.nodes)
    dist = [UNREACHABLE] * n
    best_path = [None] * n
    done = [False] * n
    start = (source,)
    dist[source] = 0.0
    best_path[source] = start
    heap = [(0.0, start, source)]
    while heap:
        d, path, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        dist[u] = d
        best_path[u] = path
        for v, w in adj[u]:
            if done[v]:
                continue
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                cand = path + (v,)
                best_path[v] = cand
                heapq.heappush(heap, (nd, cand, v))
            elif nd == dist[v]:
                cand = path + (v,)
                if best_path[v] is None or cand < best_path[v]:
                    best_path[v] = cand
                    heapq.heappush(heap, (nd, cand, v))
    return dist, best_path


def diameter(topo: Topology) -> float:
    """Largest finite pairwise delay over live links."""
    worst = 0.0
    for src in topo.nodes:
        for d in shortest_delays(topo, src):
            if d is not UNREACHABLE and math.isfinite(d) and d > worst:
                worst = d
    return worst


# ---------------------------------------------------------------------------
# JSON serialization


def topology_to_dict(topo: Topology) -> dict:
    return {
        "nodes": list(topo.nodes),
        "links": [
            {"u": l.u, "v": l.v, "delay": l.delay, "up": l.up} for l in topo.links
        ],
        "domains": [
            {
                "id": d.id,
                "switches": list(d.switches),
                "candidate_sites": list(d.candidate_sites),
                "controller_site": d.controller_site,
                "servers": {str(k): v for k, v in sorted(d.servers.items())},
                "capacity_volatility": d.capacity_volatility,
            }
            for d in topo.domains
        ],
        "focal_domain": topo.focal_domain,
    }


def topology_from_dict(data: dict) -> Topology:
    links = tuple(
        Link(int(l["u"]), int(l["v"]), float(l["delay"]), bool(l["up"]))
        for l in data["links"]
    )
    domains = tuple(
        Domain(
            int(d["id"]),
            tuple(int(s) for s in d["switches"]),
            tuple(int(s) for s in d["candidate_sites"]),
            int(d["controller_site"]),
            {int(k): float(v) for k, v in d["servers"].items()},
            float(d.get("capacity_volatility", 1.0)),
        )
        for d in data["domains"]
    )
    return Topology(tuple(int(n) for n in data["nodes"]), links, domains,
                    int(data["focal_domain"]))


def save_topology(path, topo: Topology) -> None:
    with open(path, "w") as fh:
        json.dump(topology_to_dict(topo), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_topology(path) -> Topology:
    with open(path) as fh:
        return topology_from_dict(json.load(fh))
