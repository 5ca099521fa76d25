"""Complete-linkage clustering of mode trajectories and the clustered form."""
from __future__ import annotations

import csv
import heapq
import json
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dendrogram:
    """Merge list ``(a, b, height, new_id)``; leaves are ``0..n_leaves-1`` and
    the ``m``-th merge creates cluster ``n_leaves + m``."""

    n_leaves: int
    merges: list = field(default_factory=list)

    @property
    def heights(self):
        return np.array([m[2] for m in self.merges])

    def members(self):
        """Leaf lists for every cluster id."""
        out = {i: [i] for i in range(self.n_leaves)}
        for a, b, _, c in self.merges:
            out[c] = sorted(out[a] + out[b])
        return out

    def cophenetic_matrix(self):
        n = self.n_leaves
        D = np.zeros((n, n))
        mem = {i: [i] for i in range(n)}
        for a, b, h, c in self.merges:
            la, lb = mem.pop(a), mem.pop(b)
            D[np.ix_(la, lb)] = h
            D[np.ix_(lb, la)] = h
            mem[c] = la + lb
        return D

    def to_dict(self):
        return {"n_leaves": self.n_leaves,
                "merges": [{"a": int(a), "b": int(b), "height": float(h), "id": int(c)}
                           for a, b, h, c in self.merges]}

    def to_json(self, path=None, labels=None):
        d = self.to_dict()
        if labels is not None:
            d["leaf_labels"] = [int(x) for x in labels]
        text = json.dumps(d, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def render_text(self, labels=None):
        """One line per merge: height, new cluster, merged children, size."""
        labels = list(range(self.n_leaves)) if labels is None else list(labels)
        mem = self.members()
        lines = []
        for a, b, h, c in self.merges:
            name = lambda x: f"leaf {labels[x]}" if x < self.n_leaves else f"C{x}"  # noqa: E731
            lines.append(f"{h:10.6f}  C{c} <- {name(a)} + {name(b)}  (size {len(mem[c])})")
        return "\n".join(lines)


def _union_groups(groups, n):
    """Merge overlapping leaf groups; returns sorted groups of size > 1."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for g in groups:
        g = [int(x) for x in g]
        for x in g[1:]:
            ra, rb = find(g[0]), find(x)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    out = {}
    for i in range(n):
        out.setdefault(find(i), []).append(i)
    return sorted((g for g in out.values() if len(g) > 1), key=lambda g: g[0])


def hac_complete_link(H, premerge=()):
    """Complete-linkage agglomeration over the distance matrix ``H``.

    The pair of active clusters with the smallest linkage is merged at each
    step, ties going to the smallest ``(a, b)`` id pair.  Leaf groups listed
    in ``premerge`` are merged first at height 0 (overlapping groups are
    joined).
    """
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    if H.shape != (n, n):
        raise ValueError("distance matrix must be square")
    dend = Dendrogram(n)
    if n < 2:
        return dend
    D = {}
    active = set(range(n))
    members = {i: [i] for i in range(n)}
    next_id = n

    def link(x, y):
        return float(np.max(H[np.ix_(members[x], members[y])]))

    def merge(a, b, h):
        nonlocal next_id
        c = next_id
        next_id += 1
        dend.merges.append((a, b, h, c))
        members[c] = members.pop(a) + members.pop(b)
        active.discard(a)
        active.discard(b)
        active.add(c)
        return c

    for group in _union_groups(premerge, n):
        cur = group[0]
        for leaf in group[1:]:
            a, b = min(cur, leaf), max(cur, leaf)
            cur = merge(a, b, 0.0)

    ids = sorted(active)
    heap = []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            d = link(a, b)
            D[(a, b)] = d
            heap.append((d, a, b))
    heapq.heapify(heap)
    while len(active) > 1:
        d, a, b = heapq.heappop(heap)
        if a not in active or b not in active:
            continue
        c = merge(a, b, d)
        for x in sorted(active - {c}):
            dx = max(D[(min(a, x), max(a, x))], D[(min(b, x), max(b, x))])
            D[(x, c)] = dx
            heapq.heappush(heap, (dx, x, c))
    return dend


def cophenetic_coefficient(dendrogram, H):
    """Pearson correlation of input distances and merge-height distances."""
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    if n < 3:
        raise ValueError("cophenetic coefficient needs at least three leaves")
    iu = np.triu_indices(n, 1)
    x = H[iu]
    y = dendrogram.cophenetic_matrix()[iu]
    return float(np.corrcoef(x, y)[0, 1])


def _clusters_at(dendrogram, threshold):
    mem = {i: [i] for i in range(dendrogram.n_leaves)}
    for a, b, h, c in dendrogram.merges:
        if h > threshold:
            break
        mem[c] = mem.pop(a) + mem.pop(b)
    return sorted((sorted(v) for v in mem.values()), key=lambda g: g[0])


def cut(dendrogram, threshold="auto", max_cluster_size=40, leaf_sizes=None):
    """Flat clusters from a dendrogram.

    Merges with height ``<= threshold`` are applied.  If a resulting
    cluster's state dimension exceeds ``max_cluster_size`` the threshold is
    lowered to the largest merge height that respects the cap; ``"auto"``
    starts from the root.

    Returns
    -------
    clusters : list of sorted leaf lists, ordered by smallest leaf
    threshold : float
        The threshold actually used.
    """
    n = dendrogram.n_leaves
    sizes = np.ones(n, dtype=int) if leaf_sizes is None else np.asarray(leaf_sizes, dtype=int)
    heights = dendrogram.heights
    top = float(heights.max()) if heights.size else 0.0
    start = top if threshold == "auto" else float(threshold)

    def ok(t):
        return all(sizes[g].sum() <= max_cluster_size for g in _clusters_at(dendrogram, t))

    candidates = sorted({float(h) for h in heights if h <= start} | {0.0}, reverse=True)
    if ok(start):
        chosen = start
    else:
        chosen = None
        for t in candidates:
            if t < start and ok(t):
                chosen = t
                break
        if chosen is None:
            chosen = 0.0
            warnings.warn("a pre-merged unit alone exceeds the cluster size cap")
    return _clusters_at(dendrogram, chosen), chosen


# --- permutation and split ----------------------------------------------

@dataclass
class ClusterPartition:
    """Cluster-ordered state arrangement.

    ``perm[i]`` is the modal state placed at position ``i``; clusters occupy
    ``ranges`` in order, the preserved (non-reduced) states follow in
    ``preserved_range``.
    """

    clusters: list
    unit_clusters: list
    threshold: float
    perm: np.ndarray
    ranges: list
    preserved_range: tuple
    preserved_units: list
    E1: np.ndarray = None
    E2: np.ndarray = None

    @property
    def inverse_perm(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    def pattern(self, n):
        mask = np.zeros((n, n), dtype=bool)
        for a, b in list(self.ranges) + [self.preserved_range]:
            mask[a:b, a:b] = True
        return mask

    @property
    def E2_norms(self):
        if self.E2 is None:
            return []
        return [float(np.linalg.norm(self.E2[k, 1], 2)) for k in range(self.E2.shape[0])]

    def cluster_sizes(self):
        return [int(b - a) for a, b in self.ranges]


@dataclass
class ClusteredSystem:
    A: np.ndarray
    E: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    partition: ClusterPartition

    def subsystem(self, ell):
        """Cluster ``ell`` as ``(A, E1, B, C, D)`` grid arrays."""
        a, b = self.partition.ranges[ell] if ell >= 0 else self.partition.preserved_range
        return (self.A[:, a:b, a:b], self.partition.E1[:, :, a:b, a:b],
                self.B[:, a:b, :], self.C[:, :, a:b], self.D)


def permute_and_split(modal, unit_clusters, preserved_units=(), threshold=float("nan"),
                      use_rate_term=True):
    """Rearrange modal states cluster by cluster and split the rate term.

    Parameters
    ----------
    modal : ModalForm
    unit_clusters : list of lists of unit indices
        The reducible units grouped into clusters.
    preserved_units : unit indices kept unreduced (unstable, mixed,
        integrators); they form one trailing block in the given order.
    """
    off = modal.offsets
    perm, ranges, pos = [], [], 0
    for cl in unit_clusters:
        start = pos
        for u in sorted(cl):
            perm.extend(range(off[u], off[u + 1]))
            pos += off[u + 1] - off[u]
        ranges.append((start, pos))
    pstart = pos
    for u in preserved_units:
        perm.extend(range(off[u], off[u + 1]))
        pos += off[u + 1] - off[u]
    perm = np.asarray(perm, dtype=int)
    if perm.size != modal.n or np.unique(perm).size != perm.size:
        raise ValueError("clusters and preserved units must partition the modal states")
    clusters = [sorted(t for u in cl for t in modal.units[u].trajectories) for cl in unit_clusters]
    part = ClusterPartition(clusters, [sorted(c) for c in unit_clusters], threshold, perm,
                            ranges, (pstart, pos), list(preserved_units))
    ix = np.ix_(perm, perm)
    A = modal.block_diagonal()[:, ix[0], ix[1]]
    E = modal.E_vertex[:, :, ix[0], ix[1]] if use_rate_term else np.zeros(
        (modal.E_vertex.shape[0], 2, modal.n, modal.n))
    mask = part.pattern(modal.n)
    part.E1 = np.where(mask, E, 0.0)
    part.E2 = E - part.E1
    B = modal.B_bar[:, perm, :]
    C = modal.C_bar[:, :, perm]
    return ClusteredSystem(A, E, B, C, modal.D, part)


def coupling_energy(modal, units):
    """Normalized rate-term coupling between pairs of units, in [0, 1]."""
    off = modal.offsets
    m = len(units)
    W = np.zeros((m, m))
    E = modal.E_vertex[:, 1]
    for i, u in enumerate(units):
        for j in range(i + 1, m):
            v = units[j]
            su, sv = slice(off[u], off[u + 1]), slice(off[v], off[v + 1])
            W[i, j] = W[j, i] = np.max(np.sqrt(np.sum(E[:, su, sv] ** 2, axis=(1, 2)) +
                                               np.sum(E[:, sv, su] ** 2, axis=(1, 2))))
    top = W.max()
    return W / top if top > 0 else W


def export_clusters_csv(path, clusters):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_index", "cluster_id"])
        rows = sorted((t, cid) for cid, cl in enumerate(clusters) for t in cl)
        w.writerows(rows)
