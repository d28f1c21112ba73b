"""Versioning one graph with deltas.

Walks through the core value types: triples, graph versions as plain
sets, deltas between versions, the canonical text encoding, and the
hash-chained revision history built from them.
"""

from graphsync import (
    Delta,
    GraphOfRevisions,
    ParentLink,
    delta_apply,
    delta_compute,
    delta_invert,
    delta_parse,
    delta_serialize,
    make_revision,
    triple,
)
from graphsync.revisions import ROOT_REVISION

EX = "http://example.org/"

v0 = frozenset({
    triple(EX + "drone1", EX + "hasStatus", EX + "airborne"),
    triple(EX + "drone1", EX + "scans", EX + "sectorNorth"),
})
v1 = frozenset({
    triple(EX + "drone1", EX + "hasStatus", EX + "landed"),
    triple(EX + "drone1", EX + "scans", EX + "sectorNorth"),
    triple(EX + "drone1", EX + "battery", EX + "low"),
})

print("version 0:", len(v0), "triples")
print("version 1:", len(v1), "triples")

d = delta_compute(v0, v1)
print("\ndelta v0 -> v1:")
print("  inserted:", sorted(t.object.value for t in d.inserted))
print("  removed: ", sorted(t.object.value for t in d.removed))

assert delta_apply(v0, d) == v1
assert delta_apply(v1, delta_invert(d)) == v0
print("\napply and invert round-trip: ok")

text = delta_serialize(d)
print("\ncanonical text encoding:")
print(text)
assert delta_parse(text) == d

# build a two-revision history and replay it
gor = GraphOfRevisions(EX + "drone-doc")
author = b"\x01" * 16
r1 = make_revision(author, 100, (ParentLink(ROOT_REVISION.hash, delta_compute(frozenset(), v0)),))
gor.insert(r1)
r2 = make_revision(author, 200, (ParentLink(r1.hash, d),))
gor.insert(r2)

print("revision 1:", r1.hash.hex()[:16], "...")
print("revision 2:", r2.hash.hex()[:16], "...")
assert gor.materialize(r2.hash) == v1
print("replaying the history reproduces version 1: ok")
