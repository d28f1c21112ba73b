"""Dataset metadata, discovery, and a lossy bulk transfer.

Dataset descriptions are a handful of triples (coverage rectangle,
type, holder relations) that ride along with document synchronization;
payload bytes move only on request, chunked and resumable, here across
a 25 %-loss link.
"""

import random
import tempfile

from graphsync.datasets import (
    DatasetMeta,
    DatasetRelation,
    PayloadStore,
    Rect,
    NS,
    dataset_to_triples,
    discover,
    remaining_region,
)
from graphsync.netsim import LinkPolicy, NetworkSim
from graphsync.transfer import ReceiverSession, SenderSession, plan_transfer, split_chunks
from graphsync.wire import AgentId, decode_frame, encode_frame

UAV = AgentId(b"\x02" * 16, "uav")
OPERATOR = AgentId(b"\x01" * 16, "operator")

# --- metadata and discovery -------------------------------------------------

scans = {
    "urn:ds:west": Rect(0, 0, 50, 40),
    "urn:ds:east": Rect(50, 0, 100, 40),
}
doc_triples = set()
for uri, rect in scans.items():
    meta = DatasetMeta(uri, rect, NS + "points_cloud")
    doc_triples |= dataset_to_triples(meta, [DatasetRelation(UAV, uri, "has")])

region_of_interest = Rect(30, 10, 70, 60)
found = discover(doc_triples, region_of_interest)
print("datasets overlapping the region of interest:")
for uri, holders in found:
    print("  ", uri, "held by", holders)

gaps = remaining_region(region_of_interest, [scans[u] for u, _ in found])
print("uncovered area still to scan:", sum(p.area for p in gaps), "map units^2,",
      len(gaps), "rectangles")

sender_id, receivers = plan_transfer([UAV], receivers=[OPERATOR])
print("transfer plan: sender", sender_id.name, "->", [r.name for r in receivers])

# --- bulk transfer over a lossy link -----------------------------------------

payload = random.Random(7).randbytes(300_000)
chunk_size = 16 * 1024
sim = NetworkSim(7, policy=LinkPolicy(("uniform", 2, 12), loss=0.25,
                                      duplication=0.05, reorder=0.1))

with tempfile.TemporaryDirectory() as store_dir:
    store = PayloadStore(store_dir)
    sessions = {}
    sim.register("uav", lambda src, fr, now: sessions["tx"].on_msg(decode_frame(fr), now))
    sim.register("operator",
                 lambda src, fr, now: sessions["rx"].on_msg(decode_frame(fr), now))

    sessions["tx"] = SenderSession(
        "urn:ds:west", payload, {OPERATOR.uuid},
        send=lambda m: sim.send(encode_frame(m), "uav"),
        schedule=sim.call_later, chunk_size=chunk_size,
    )
    sessions["rx"] = ReceiverSession(
        "urn:ds:west", OPERATOR.uuid,
        max_chunks=len(split_chunks(payload, chunk_size)),
        send=lambda m: sim.send(encode_frame(m), "operator"),
        schedule=sim.call_later,
        commit=lambda data: store.commit("urn:ds:west", NS + "points_cloud", data,
                                         chunk_size),
        abort=lambda: print("transfer aborted!"),
        chunk_size=chunk_size,
    )
    sim.advance(60_000)

    got = store.load("urn:ds:west")
    print("\ntransferred", got.total_bytes, "bytes in", len(got.chunks), "chunks")
    print("payload intact:", got.data() == payload)
    print("final throttle level:", sessions["tx"].state.tau,
          "(ups", sessions["tx"].state.throttle_up_seen,
          "downs", sessions["tx"].state.throttle_down_seen, ")")
    assert got.data() == payload
