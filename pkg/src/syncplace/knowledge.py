"""The focal controller's possibly-stale view of the neighbor domains.

Each neighbor domain is represented by an atomic snapshot (owned links plus
server capacities, captured on sync) and a staleness counter counting steps
since that sync.  The focal controller always sees its own domain fresh
(`own_domain_always_fresh` below); inter-domain links are bookkept by the
lower-numbered endpoint domain so the merged view is unambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .netmodel import Topology

# The focal controller orchestrates its own domain directly, so its view of
# that domain never goes stale.  Kept as a visible switch rather than an
# unstated assumption.
OWN_DOMAIN_ALWAYS_FRESH = True

# Staleness values fed to the state encoder saturate here; raw counters keep
# counting for metrics.
DEFAULT_STALENESS_CAP = 100


@dataclass
class DomainSnapshot:
    """One neighbor domain as of `captured_at`: the links it owns (intra plus
    lower-number-owned inter-domain) and its server capacities."""

    domain_id: int
    links: tuple
    servers: dict
    captured_at: int


def link_owner(topo: Topology, link) -> int:
    """Owning domain of a link: the lower-numbered endpoint domain."""
    return min(topo.domain_of(link.u), topo.domain_of(link.v))


def _capture(truth: Topology, domain_id: int, t: int) -> DomainSnapshot:
    owned = tuple(l for l in truth.links if link_owner(truth, l) == domain_id)
    servers = dict(truth.domain(domain_id).servers)
    return DomainSnapshot(domain_id, owned, servers, t)


@dataclass
class KnowledgeBase:
    """Snapshots and staleness counters for every neighbor of the focal domain.

    Operations are pure: they return a new KnowledgeBase.  Counters are raw
    (unsaturated); saturation is applied by `staleness_vector`.
    """

    focal_domain: int
    neighbor_ids: tuple
    snapshots: dict
    staleness: dict

    @classmethod
    def from_truth(cls, truth: Topology, t: int) -> "KnowledgeBase":
        """Fresh knowledge: every neighbor snapshotted at step t, counters 0."""
        neighbors = truth.neighbor_domains()
        snaps = {d: _capture(truth, d, t) for d in neighbors}
        return cls(truth.focal_domain, neighbors, snaps, {d: 0 for d in neighbors})

    def sync(self, truth: Topology, neighbor: int, t: int) -> "KnowledgeBase":
        """Replace one neighbor's snapshot with ground truth at step t."""
        if neighbor not in self.snapshots:
            raise ValueError(f"unknown neighbor domain {neighbor}")
        snaps = dict(self.snapshots)
        snaps[neighbor] = _capture(truth, neighbor, t)
        stale = dict(self.staleness)
        stale[neighbor] = 0
        return replace(self, snapshots=snaps, staleness=stale)

    def advance_staleness(self) -> "KnowledgeBase":
        """Every neighbor's counter grows by one step; snapshots untouched."""
        return replace(self, staleness={d: c + 1 for d, c in self.staleness.items()})

    def staleness_vector(self, cap: int = DEFAULT_STALENESS_CAP) -> tuple:
        """Counters in neighbor order, saturated at `cap`."""
        return tuple(min(self.staleness[d], cap) for d in self.neighbor_ids)

    def raw_staleness_vector(self) -> tuple:
        return tuple(self.staleness[d] for d in self.neighbor_ids)

    def perceived_global_graph(self, truth: Topology) -> Topology:
        """Merge the focal domain's ground truth with the neighbor snapshots.

        Link liveness comes from the owner's snapshot (or from truth for
        focal-owned links); server capacities come from each domain's
        snapshot (or truth for the focal domain).  Structure, delays, and
        controller sites always mirror truth, which is what the focal
        controller can observe directly.
        """
        up_override = {}
        for snap in self.snapshots.values():
            for lnk in snap.links:
                up_override[lnk.key()] = lnk.up
        links = tuple(
            replace(l, up=up_override[l.key()]) if l.key() in up_override else l
            for l in truth.links
        )
        domains = []
        for d in truth.domains:
            if d.id == self.focal_domain:
                domains.append(replace(d, servers=dict(d.servers)))
            else:
                domains.append(replace(d, servers=dict(self.snapshots[d.id].servers)))
        return replace(truth, links=links, domains=tuple(domains))


def placement_age_vector(num_sites: int, site_index: int, age: int) -> tuple:
    """Age vector over candidate sites: zero everywhere except the current
    site, which carries the steps since the controller was (re)assigned."""
    vec = [0] * num_sites
    vec[site_index] = age
    return tuple(vec)
