"""Versioned document history: a DAG of revisions whose edges carry deltas.

Every revision is content-addressed by a SHA-512 digest over its author,
timestamp and parent links, so histories can be exchanged and verified
between agents.  Reconciliation of divergent branches is done either by
a two-parent merge revision (always applicable) or by rebasing a linear,
still-local branch onto the other head.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .triples import Delta, canonical_delta_bytes, delta_apply, delta_compute

HASH_LEN = 64
UUID_LEN = 16
NULL_AUTHOR = b"\x00" * UUID_LEN


class HashMismatch(ValueError):
    """Revision content does not hash to its claimed digest."""


class UnknownRevision(KeyError):
    pass


class UnresolvedAncestor(ValueError):
    """An ancestor of the requested revision has not been received yet."""


class MergePathDivergence(RuntimeError):
    """The two parent paths of a merge revision materialize differently."""


class NotLinear(ValueError):
    pass


class NotLocal(ValueError):
    pass


class EmptyPath(ValueError):
    pass


@dataclass(frozen=True)
class ParentLink:
    parent: bytes
    delta: Delta


@dataclass
class Revision:
    """One node of the history DAG.  ``local`` marks a revision that has
    not been published yet; it is the only mutable part and is not
    covered by the hash."""

    hash: bytes
    author: bytes
    timestamp: int
    parents: tuple[ParentLink, ...]
    signature: bytes = b""
    local: bool = False

    @property
    def is_merge(self) -> bool:
        return len(self.parents) == 2

    @property
    def is_root(self) -> bool:
        return not self.parents


def revision_hash(author: bytes, timestamp: int, parents: Iterable[ParentLink]) -> bytes:
    """SHA-512 over (author uuid, timestamp, per-parent SHA-512 of
    (canonical delta bytes, parent digest))."""
    h = hashlib.sha512()
    h.update(author)
    h.update(struct.pack(">q", timestamp))
    for link in parents:
        inner = hashlib.sha512()
        inner.update(canonical_delta_bytes(link.delta))
        inner.update(link.parent)
        h.update(inner.digest())
    return h.digest()


def make_revision(
    author: bytes,
    timestamp: int,
    parents: Iterable[ParentLink],
    sign: Optional[Callable[[bytes], bytes]] = None,
    local: bool = False,
) -> Revision:
    parents = tuple(parents)
    digest = revision_hash(author, timestamp, parents)
    signature = sign(digest) if sign is not None else b""
    return Revision(digest, author, timestamp, parents, signature, local)


ROOT_REVISION = make_revision(NULL_AUTHOR, 0, ())


class GraphOfRevisions:
    """All known revisions of one document, keyed by digest.

    Revisions may arrive before their parents; they are stored anyway
    and the unresolved parent digests are reported so the caller can
    request them.  Materializations are cached per revision.
    """

    def __init__(self, uri: str = ""):
        self.uri = uri
        self.root = ROOT_REVISION
        self._revs: dict[bytes, Revision] = {ROOT_REVISION.hash: ROOT_REVISION}
        self._children: dict[bytes, set[bytes]] = {ROOT_REVISION.hash: set()}
        self._mat: dict[bytes, frozenset] = {ROOT_REVISION.hash: frozenset()}

    # -- basic access -------------------------------------------------

    def __contains__(self, h: bytes) -> bool:
        return h in self._revs

    def __len__(self) -> int:
        return len(self._revs)

    def get(self, h: bytes) -> Revision:
        try:
            return self._revs[h]
        except KeyError:
            raise UnknownRevision(h.hex()) from None

    def revisions(self) -> Iterable[Revision]:
        return self._revs.values()

    # -- insertion ----------------------------------------------------

    def insert(self, rev: Revision) -> list[bytes]:
        """Insert after verifying the digest; idempotent.  Returns the
        parent digests not present yet."""
        if revision_hash(rev.author, rev.timestamp, rev.parents) != rev.hash:
            raise HashMismatch(rev.hash.hex())
        if rev.hash not in self._revs:
            self._revs[rev.hash] = rev
            self._children.setdefault(rev.hash, set())
            for link in rev.parents:
                self._children.setdefault(link.parent, set()).add(rev.hash)
        return [link.parent for link in rev.parents if link.parent not in self._revs]

    def missing_parents(self) -> set[bytes]:
        """Digests referenced as parents but not present."""
        return {h for h in self._children if h not in self._revs}

    def remove(self, hashes: Iterable[bytes]) -> None:
        """Drop revisions (rebased-away locals).  Refuses to drop a
        revision that still has children outside the dropped set."""
        doomed = set(hashes)
        for h in doomed:
            rev = self.get(h)
            if not rev.local:
                raise NotLocal(h.hex())
            if self._children.get(h, set()) - doomed:
                raise ValueError("cannot remove a revision with live children")
        for h in doomed:
            rev = self._revs.pop(h)
            self._children.pop(h, None)
            self._mat.pop(h, None)
            for link in rev.parents:
                kids = self._children.get(link.parent)
                if kids is not None:
                    kids.discard(h)

    # -- topology -----------------------------------------------------

    def resolved(self, h: bytes) -> bool:
        """True when every ancestor of h is present."""
        stack, seen = [h], set()
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            rev = self._revs.get(cur)
            if rev is None:
                return False
            stack.extend(link.parent for link in rev.parents)
        return True

    def heads(self) -> set[bytes]:
        """Revisions without children."""
        return {h for h, rev in self._revs.items() if not self._children.get(h)}

    def ancestors(self, h: bytes) -> set[bytes]:
        """All strict ancestors of h (excludes h itself)."""
        self.get(h)
        out: set[bytes] = set()
        stack = [link.parent for link in self.get(h).parents]
        while stack:
            cur = stack.pop()
            if cur in out:
                continue
            out.add(cur)
            rev = self._revs.get(cur)
            if rev is None:
                raise UnresolvedAncestor(cur.hex())
            stack.extend(link.parent for link in rev.parents)
        return out

    def is_ancestor(self, a: bytes, b: bytes) -> bool:
        """Strict ancestry: a is reachable from b via parent links."""
        if a == b:
            return False
        stack, seen = [b], set()
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            rev = self._revs.get(cur)
            if rev is None:
                continue
            for link in rev.parents:
                if link.parent == a:
                    return True
                stack.append(link.parent)
        return False

    def common_ancestor(self, a: bytes, b: bytes) -> bytes:
        """Meeting revision of a bidirectional unit-weight search over
        parent edges; ties broken by smaller digest."""
        self.get(a), self.get(b)
        if a == b:
            return a
        if self.is_ancestor(a, b):
            return a
        if self.is_ancestor(b, a):
            return b
        dist_a = self._bfs_distances(a)
        dist_b = self._bfs_distances(b)
        common = set(dist_a) & set(dist_b)
        if not common:
            raise UnresolvedAncestor("no common ancestor reachable")
        return min(common, key=lambda h: (dist_a[h] + dist_b[h], h))

    def _bfs_distances(self, start: bytes) -> dict[bytes, int]:
        dist = {start: 0}
        frontier = [start]
        while frontier:
            nxt = []
            for h in frontier:
                rev = self._revs.get(h)
                if rev is None:
                    raise UnresolvedAncestor(h.hex())
                for link in rev.parents:
                    if link.parent not in dist:
                        dist[link.parent] = dist[h] + 1
                        nxt.append(link.parent)
            frontier = nxt
        return dist

    def path_deltas(self, ancestor: bytes, descendant: bytes) -> list[Delta]:
        """Deltas along a shortest parent path, ordered ancestor-first.
        Parent choice ties break on smaller digest for determinism."""
        if ancestor == descendant:
            return []
        prev: dict[bytes, tuple[bytes, Delta]] = {}
        dist = {descendant: 0}
        frontier = [descendant]
        while frontier and ancestor not in dist:
            nxt = []
            for h in sorted(frontier):
                rev = self._revs.get(h)
                if rev is None:
                    raise UnresolvedAncestor(h.hex())
                for link in sorted(rev.parents, key=lambda l: l.parent):
                    if link.parent not in dist:
                        dist[link.parent] = dist[h] + 1
                        prev[link.parent] = (h, link.delta)
                        nxt.append(link.parent)
            frontier = nxt
        if ancestor not in dist:
            raise UnknownRevision(f"{ancestor.hex()} is not an ancestor of {descendant.hex()}")
        deltas = []
        cur = ancestor
        while cur != descendant:
            child, delta = prev[cur]
            deltas.append(delta)
            cur = child
        return deltas

    def path_revisions(self, ancestor: bytes, descendant: bytes) -> list[Revision]:
        """Revisions strictly above ancestor up to and including
        descendant, along the (unique) linear chain.  Raises NotLinear
        if the chain contains a merge revision."""
        chain = []
        cur = descendant
        while cur != ancestor:
            rev = self.get(cur)
            if rev.is_root:
                raise UnknownRevision(f"{ancestor.hex()} not reachable")
            if rev.is_merge:
                raise NotLinear(cur.hex())
            chain.append(rev)
            cur = rev.parents[0].parent
        chain.reverse()
        return chain

    # -- materialization ----------------------------------------------

    def materialize(self, h: bytes) -> frozenset:
        """Triple set obtained by replaying deltas root-to-h.  For merge
        revisions both parent paths are required to agree."""
        if h in self._mat:
            return self._mat[h]
        stack = [h]
        while stack:
            cur = stack[-1]
            if cur in self._mat:
                stack.pop()
                continue
            rev = self._revs.get(cur)
            if rev is None:
                raise UnresolvedAncestor(cur.hex())
            pending = [l.parent for l in rev.parents if l.parent not in self._mat]
            if pending:
                stack.extend(pending)
                continue
            stack.pop()
            results = [
                delta_apply(self._mat[l.parent], l.delta) for l in rev.parents
            ]
            if rev.is_merge and results[0] != results[1]:
                raise MergePathDivergence(cur.hex())
            self._mat[cur] = results[0] if results else frozenset()
        return self._mat[h]


# ---------------------------------------------------------------------------
# Delta combination
# ---------------------------------------------------------------------------


def combine(d1: Delta, d2: Delta) -> Delta:
    """Fold two consecutive deltas into one:
    inserted = (I1 \\ R2) | I2, removed = R1 | R2."""
    return Delta((d1.inserted - d2.removed) | d2.inserted, d1.removed | d2.removed)


def combine_many(path: list[Delta]) -> Delta:
    """Left fold of combine over a non-empty delta path."""
    if not path:
        raise EmptyPath("combine_many needs at least one delta")
    acc = path[0]
    for d in path[1:]:
        acc = combine(acc, d)
    return acc


# ---------------------------------------------------------------------------
# Merge / rebase / squash
# ---------------------------------------------------------------------------


def _branch_delta(gor: GraphOfRevisions, ancestor: bytes, head: bytes) -> Delta:
    """Combined branch delta, canonicalized against the ancestor graph.

    The raw fold can carry insert/remove overlaps from re-insertion
    histories; recomputing against the materialized endpoints keeps the
    merge formula path-independent in every case.
    """
    g_l = gor.materialize(ancestor)
    if ancestor == head:
        return Delta()
    folded = combine_many(gor.path_deltas(ancestor, head))
    endpoint = delta_apply(g_l, folded)
    if endpoint != gor.materialize(head):
        raise MergePathDivergence(head.hex())
    return delta_compute(g_l, endpoint)


def merge_revision(
    gor: GraphOfRevisions,
    h_i: bytes,
    h_j: bytes,
    author: bytes,
    timestamp: int,
    sign: Optional[Callable[[bytes], bytes]] = None,
) -> Revision:
    """Two-parent revision reconciling the branches at h_i and h_j.

    When one head is an ancestor of the other (or they are equal) no new
    revision is needed and the descendant is returned unchanged.
    """
    if h_i == h_j:
        return gor.get(h_i)
    if gor.is_ancestor(h_i, h_j):
        return gor.get(h_j)
    if gor.is_ancestor(h_j, h_i):
        return gor.get(h_i)

    l = gor.common_ancestor(h_i, h_j)
    g_l = gor.materialize(l)
    d_li = _branch_delta(gor, l, h_i)
    d_lj = _branch_delta(gor, l, h_j)

    merged = (g_l - (d_li.removed | d_lj.removed)) | d_li.inserted | d_lj.inserted
    delta_im = Delta(d_lj.inserted - d_li.inserted, d_lj.removed - d_li.removed)
    delta_jm = Delta(d_li.inserted - d_lj.inserted, d_li.removed - d_lj.removed)

    rev = make_revision(
        author,
        timestamp,
        (ParentLink(h_i, delta_im), ParentLink(h_j, delta_jm)),
        sign=sign,
    )
    gor.insert(rev)
    assert gor.materialize(rev.hash) == merged
    return rev


def _check_linear_local(gor: GraphOfRevisions, chain: list[Revision]) -> None:
    for idx, rev in enumerate(chain):
        if not rev.local:
            raise NotLocal(rev.hash.hex())
        kids = gor._children.get(rev.hash, set())
        expected = {chain[idx + 1].hash} if idx + 1 < len(chain) else set()
        if kids != expected:
            raise NotLinear(rev.hash.hex())


def rebase_revisions(
    gor: GraphOfRevisions,
    h_m: bytes,
    h_k: bytes,
    timestamp: int,
    sign: Optional[Callable[[bytes], bytes]] = None,
    recompute_deltas: bool = False,
) -> list[Revision]:
    """Move the linear local branch ending at h_m on top of h_k.

    Each source revision is copied in order with the same author and
    delta (or, with recompute_deltas, the delta recomputed against its
    new parent); the originals are removed.  Returns the copies in
    order.
    """
    ancestor = gor.common_ancestor(h_m, h_k)
    chain = gor.path_revisions(ancestor, h_m)
    _check_linear_local(gor, chain)

    new_revs: list[Revision] = []
    next_parent = h_k
    for rev in chain:
        delta = rev.parents[0].delta
        if recompute_deltas:
            base = gor.materialize(next_parent)
            delta = delta_compute(base, delta_apply(base, delta))
        copy = make_revision(
            rev.author,
            timestamp,
            (ParentLink(next_parent, delta),),
            sign=sign,
            local=rev.local,
        )
        gor.insert(copy)
        new_revs.append(copy)
        next_parent = copy.hash
    gor.remove(rev.hash for rev in chain)
    return new_revs


def squash(
    gor: GraphOfRevisions,
    tip: bytes,
    timestamp: int,
    sign: Optional[Callable[[bytes], bytes]] = None,
) -> Revision:
    """Collapse the maximal linear local chain ending at tip into a
    single revision carrying the combined delta."""
    chain: list[Revision] = []
    cur = tip
    while True:
        rev = gor.get(cur)
        if not rev.local or rev.is_merge or rev.is_root:
            break
        chain.append(rev)
        cur = rev.parents[0].parent
    if not chain:
        raise NotLocal(tip.hex())
    chain.reverse()
    _check_linear_local(gor, chain)
    base = chain[0].parents[0].parent
    combined = combine_many([r.parents[0].delta for r in chain])
    squashed = make_revision(
        chain[-1].author,
        timestamp,
        (ParentLink(base, combined),),
        sign=sign,
        local=True,
    )
    gor.insert(squashed)
    gor.remove(rev.hash for rev in chain)
    return squashed
