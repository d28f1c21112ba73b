"""Desk-scale experiment harness.

Each experiment builds its world from (parameters, seed), writes CSV
metrics into an output directory, and returns a result dict that the
acceptance suite asserts on.  Simulated-time outputs are bit-stable for
a given seed; wall-clock timings go to clearly named timing files that
are exempt from the determinism contract.
"""

from __future__ import annotations

import csv
import hashlib
import os
import random
import time
from dataclasses import dataclass

import numpy as np

from .agent import POLICY_MERGE_ONLY, POLICY_MERGE_REBASE, SyncAgent, SyncConfig
from .datasets import (
    DatasetMeta,
    DatasetRelation,
    PayloadStore,
    Rect,
    NS,
    dataset_to_triples,
    datasets_from_triples,
    discover,
    remaining_region,
)
from .netsim import LinkPolicy, NetworkSim, Scenario, Topology
from .revisions import ROOT_REVISION, GraphOfRevisions, ParentLink, make_revision, merge_revision, rebase_revisions, squash
from .storage import load_document, save_document
from .transfer import ReceiverSession, SenderSession, payload_for_send, split_chunks
from .triples import Delta, triple
from .wire import AgentId, decode_frame, encode_frame

POINTS_CLOUD = NS + "points_cloud"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_payload_manifest(out_dir, stores: dict[str, PayloadStore]) -> None:
    rows = []
    for name in sorted(stores):
        store = stores[name]
        for uri in store.list_datasets():
            digest = hashlib.sha256(store.load(uri).data()).hexdigest()
            rows.append((uri, name, digest))
    _write_csv(os.path.join(out_dir, "payloads.csv"),
               ["dataset", "holder", "sha256"], rows)


def fresh_delta(tag: str, count: int, start: int = 0) -> Delta:
    return Delta.of(
        {triple(f"urn:{tag}:{i}", "urn:p", f"urn:v:{i}") for i in range(start, start + count)},
        (),
    )


def fit_r2(xs, ys, degree: int = 1) -> float:
    """Coefficient of determination of a polynomial least-squares fit."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    pred = np.polyval(np.polyfit(xs, ys, degree), xs)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - float(np.sum((ys - pred) ** 2)) / ss_tot


# ---------------------------------------------------------------------------
# merge scaling
# ---------------------------------------------------------------------------


def run_merge_scaling(out_dir, revisions: int = 200, seed: int = 1,
                      triple_counts=(10, 100), repeats: int = 3) -> dict:
    """K same-parent revisions merged sequentially into one; records the
    per-merge wall time (minimum over repeats, GC paused while timing)
    and its cumulative curve for each change size."""
    import gc

    os.makedirs(out_dir, exist_ok=True)
    rows = []
    result = {}
    for n_triples in triple_counts:
        per_index: list[float] = []
        final_triples = 0
        for _ in range(repeats):
            gor = GraphOfRevisions("doc:merge-scaling")
            base = make_revision(
                b"\x01" * 16, 0, (ParentLink(ROOT_REVISION.hash, fresh_delta("base", 5)),)
            )
            gor.insert(base)
            children = []
            for k in range(revisions):
                author = bytes([(k % 250) + 1]) * 16
                delta = fresh_delta(f"c{n_triples}:{k}", n_triples)
                rev = make_revision(author, 1, (ParentLink(base.hash, delta),))
                gor.insert(rev)
                children.append(rev.hash)
            merged = children[0]
            gc.collect()
            gc.disable()
            try:
                run_times = []
                for k, nxt in enumerate(children[1:], start=1):
                    t0 = time.perf_counter()
                    merged = merge_revision(gor, merged, nxt, b"\xff" * 16, 2 + k).hash
                    run_times.append(time.perf_counter() - t0)
            finally:
                gc.enable()
            if per_index:
                per_index = [min(a, b) for a, b in zip(per_index, run_times)]
            else:
                per_index = run_times
            assert len(gor.heads()) == 1
            final_triples = len(gor.materialize(merged))
            assert final_triples == 5 + revisions * n_triples
        cumulative = 0.0
        cumulatives = []
        for k, dt in enumerate(per_index, start=1):
            cumulative += dt
            cumulatives.append(cumulative)
            rows.append((n_triples, k, f"{dt:.9f}", f"{cumulative:.9f}"))
        xs = range(1, len(per_index) + 1)
        result[n_triples] = {
            "singles": per_index,
            "total": cumulative,
            "final_triples": final_triples,
            "single_linear_r2": fit_r2(xs, per_index, 1),
            "cumulative_quadratic_r2": fit_r2(xs, cumulatives, 2),
        }
    _write_csv(
        os.path.join(out_dir, "merge-scaling.csv"),
        ["triples_per_revision", "merge_index", "single_seconds", "cumulative_seconds"],
        rows,
    )
    with open(os.path.join(out_dir, "merge-scaling-fits.txt"), "w") as fh:
        for n_triples, r in result.items():
            fh.write(f"triples={n_triples} single_linear_r2={r['single_linear_r2']:.4f} "
                     f"cumulative_quadratic_r2={r['cumulative_quadratic_r2']:.4f} "
                     f"total_seconds={r['total']:.4f}\n")
    return result


# ---------------------------------------------------------------------------
# rebase scaling
# ---------------------------------------------------------------------------


def _build_rebase_world(n_revisions: int, changes: int, seed: int):
    rng = random.Random(seed)
    gor = GraphOfRevisions("doc:rebase-scaling")
    base = make_revision(
        b"\x01" * 16, 0, (ParentLink(ROOT_REVISION.hash, fresh_delta("base", changes)),)
    )
    gor.insert(base)
    dest = make_revision(
        b"\x02" * 16, 1, (ParentLink(base.hash, fresh_delta("dest", changes)),)
    )
    gor.insert(dest)
    head = base.hash
    graph = gor.materialize(base.hash)
    for k in range(n_revisions):
        inserts = {triple(f"urn:src:{k}:{i}", "urn:p", "urn:v") for i in range(changes // 2)}
        removals = {t for t in sorted(graph, key=repr) if rng.random() < 0.1}
        removals = set(list(removals)[: changes - len(inserts)])
        rev = make_revision(
            b"\x03" * 16, 2 + k,
            (ParentLink(head, Delta.of(inserts, removals)),), local=True,
        )
        gor.insert(rev)
        head = rev.hash
        graph = gor.materialize(head)
    return gor, dest.hash, head


def run_rebase_scaling(out_dir, max_revisions: int = 40, seed: int = 1,
                       change_counts=(10, 20, 30, 40, 50), repeats: int = 3) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    times: dict[int, list[float]] = {}
    for n_rev in range(1, max_revisions + 1):
        for changes in change_counts:
            for squashed in (False, True):
                best = None
                for rep in range(repeats):
                    gor, dest, head = _build_rebase_world(n_rev, changes, seed + rep)
                    t0 = time.perf_counter()
                    tip = head
                    if squashed and n_rev > 1:
                        tip = squash(gor, tip, 1000).hash
                    moved = rebase_revisions(gor, tip, dest, 1001)
                    dt = time.perf_counter() - t0
                    best = dt if best is None else min(best, dt)
                    published = len(moved)
                    tip_graph = gor.materialize(moved[-1].hash)
                rows.append((n_rev, changes, int(squashed), f"{best:.9f}", published,
                             len(tip_graph)))
                if not squashed:
                    times.setdefault(n_rev, []).append(best)
    _write_csv(
        os.path.join(out_dir, "rebase-scaling.csv"),
        ["revisions", "changes", "squashed", "rebase_seconds", "published_revisions",
         "tip_triples"],
        rows,
    )
    mean_by_n = {n: sum(v) / len(v) for n, v in times.items()}
    linear_r2 = fit_r2(sorted(mean_by_n), [mean_by_n[n] for n in sorted(mean_by_n)], 1)

    # tip equality between variants, same seed
    equal_tips = True
    for n_rev in (1, 5, 20, max_revisions):
        gor_a, dest_a, head_a = _build_rebase_world(n_rev, 20, seed)
        moved_a = rebase_revisions(gor_a, head_a, dest_a, 1001)
        gor_b, dest_b, head_b = _build_rebase_world(n_rev, 20, seed)
        tip_b = squash(gor_b, head_b, 1000).hash if n_rev > 1 else head_b
        moved_b = rebase_revisions(gor_b, tip_b, dest_b, 1001)
        if gor_a.materialize(moved_a[-1].hash) != gor_b.materialize(moved_b[-1].hash):
            equal_tips = False
        if len(moved_b) != 1:
            equal_tips = False
    with open(os.path.join(out_dir, "rebase-scaling-fits.txt"), "w") as fh:
        fh.write(f"linear_r2={linear_r2:.4f} squash_tip_equal={equal_tips}\n")
    return {
        "mean_seconds_by_revisions": mean_by_n,
        "squash_tip_equal": equal_tips,
        "linear_r2": linear_r2,
    }


# ---------------------------------------------------------------------------
# twelve-agent partition run
# ---------------------------------------------------------------------------

PARTITION_DOC = "doc:shared-map"


def _make_sync_team(sim: NetworkSim, n: int, seed: int, config: SyncConfig,
                    groups: dict[str, int], documents=(PARTITION_DOC,)):
    agents = []
    for i in range(n):
        ident = AgentId(bytes([i + 1]) * 16, f"agent{i:02d}")
        agent = SyncAgent(ident, sim, config, rng=random.Random(seed * 1000 + i))
        for uri in documents:
            agent.subscribe(uri)
        sim.register(agent.name, agent.on_frame, group=groups.get(f"agent{i:02d}", 0))
        agent.start()
        agents.append(agent)
    return agents


def run_partition_12(out_dir, seed: int = 1, loss: float = 0.05,
                     windows=((60_000, 100_000, 1), (140_000, 180_000, 2),
                              (220_000, 260_000, 1)),
                     end_time: int = 400_000) -> dict:
    """Twelve agents in three groups, three group-offline windows,
    concurrent edits throughout; checks convergence, master uniqueness
    and that no published update is lost."""
    os.makedirs(out_dir, exist_ok=True)
    groups = {f"agent{i:02d}": i // 4 for i in range(12)}
    sim = NetworkSim(seed, policy=LinkPolicy(("uniform", 2, 8), loss=loss,
                                             duplication=0.02, reorder=0.05),
                     topology=Topology(dict(groups)))
    agents = _make_sync_team(sim, 12, seed, SyncConfig(), groups)
    for start, end, group in windows:
        sim.set_group_offline(group, start, end)

    rng = random.Random(seed)
    inserted: set = set()

    def schedule_edit(agent: SyncAgent, when: int, tag: str, count: int):
        def fire(now, a=agent, t=tag, c=count):
            delta = fresh_delta(t, c)
            inserted.update(delta.inserted)
            a.local_change(PARTITION_DOC, delta, now)
        sim.call_at(when, fire)

    edit_stop = 250_000
    for i, agent in enumerate(agents):
        when = 8_000 + rng.randrange(4000)
        k = 0
        while when < edit_stop:
            schedule_edit(agent, when, f"e{i}:{k}", rng.randrange(1, 4))
            when += 6_000 + rng.randrange(6000)
            k += 1

    sim.advance(end_time)

    heads = [a.head_graph(PARTITION_DOC) for a in agents]
    head_hashes = [a.documents[PARTITION_DOC].own_head for a in agents]
    masters = [a for a in agents if a.is_master(PARTITION_DOC)]
    published = set()
    for a in agents:
        published.update(a.published_log)

    gor0 = agents[0].documents[PARTITION_DOC].gor
    head0 = agents[0].documents[PARTITION_DOC].own_head
    reachable = gor0.ancestors(head0) | {head0}
    all_reachable = all(h in reachable for h in published)

    _write_csv(
        os.path.join(out_dir, "summary.csv"),
        ["agent", "head_hash", "head_triples", "is_master"],
        [
            (a.name, a.documents[PARTITION_DOC].own_head.hex(),
             len(heads[i]), int(a.is_master(PARTITION_DOC)))
            for i, a in enumerate(agents)
        ],
    )
    sim.write_event_log(os.path.join(out_dir, "events.csv"))
    save_document(gor0, os.path.join(out_dir, "doc0.log"), head=head0)

    return {
        "converged": len(set(heads)) == 1,
        "heads_equal": len(set(head_hashes)) == 1,
        "n_masters": len(masters),
        "all_published_reachable": all_reachable,
        "no_lost_updates": inserted <= heads[0],
        "n_published": len(published),
        "n_events": len(sim.event_log),
    }


# ---------------------------------------------------------------------------
# maximum revision rate
# ---------------------------------------------------------------------------


def run_max_rate(out_dir, agents: int = 2, docs: int = 1, changes: int = 10,
                 seed: int = 1, iterations: int = 30) -> dict:
    """The master-side merge cost of the lockstep loop: every agent
    revises every document, then the master merges until single-headed.
    The CSV carries only simulation-deterministic columns; wall-clock
    averages go to max-rate-timing.txt."""
    os.makedirs(out_dir, exist_ok=True)
    rng = random.Random(seed)
    gors = [GraphOfRevisions(f"doc:{d}") for d in range(docs)]
    bases = [g.root.hash for g in gors]
    rows = []
    merge_seconds = []
    for it in range(iterations):
        t_iter = 0.0
        for d, gor in enumerate(gors):
            current = gor.materialize(bases[d])
            for a in range(agents):
                inserts = {
                    triple(f"urn:i{it}:a{a}:{j}", "urn:p", f"urn:v:{d}")
                    for j in range(max(1, changes - changes // 4))
                }
                pool = sorted(current, key=repr)
                removals = set(pool[: changes // 4]) if pool else set()
                rev = make_revision(
                    bytes([a + 1]) * 16, it + 1,
                    (ParentLink(bases[d], Delta.of(inserts, removals)),),
                )
                gor.insert(rev)
            t0 = time.perf_counter()
            merges = 0
            heads = sorted(gor.heads(), key=lambda h: (gor.get(h).timestamp, h))
            while len(heads) > 1:
                merge_revision(gor, heads[0], heads[1], b"\xff" * 16, it + 1)
                merges += 1
                heads = sorted(gor.heads(), key=lambda h: (gor.get(h).timestamp, h))
            t_iter += time.perf_counter() - t0
            bases[d] = heads[0]
            rows.append((it, d, merges, len(gor.materialize(bases[d]))))
        merge_seconds.append(t_iter)
    _write_csv(
        os.path.join(out_dir, "max-rate.csv"),
        ["iteration", "doc", "merges", "head_triples"],
        rows,
    )
    avg = sum(merge_seconds) / len(merge_seconds)
    with open(os.path.join(out_dir, "max-rate-timing.txt"), "w") as fh:
        fh.write(f"agents={agents} docs={docs} changes={changes} seed={seed}\n")
        fh.write(f"average_merge_seconds_per_iteration={avg:.6f}\n")
    return {"average_merge_seconds": avg, "iterations": iterations}


# ---------------------------------------------------------------------------
# never-synchronized reproduction
# ---------------------------------------------------------------------------


def run_never_sync(out_dir, policy: str, seed: int = 1, edit_period: int = 100,
                   latency: int = 10, merge_duration: int = 85,
                   edit_stop: int = 10_000, hard_end: int = 40_000) -> dict:
    """Two agents editing every edit_period ms with the master needing
    merge_duration ms per merge; under merge-only the non-master never
    sees the master's triples, under merge+rebase the run converges."""
    os.makedirs(out_dir, exist_ok=True)
    doc = "doc:fast"
    sim = NetworkSim(seed, policy=LinkPolicy(("fixed", latency)))
    config_a = SyncConfig(policy=policy, merge_duration=merge_duration)
    config_b = SyncConfig(policy=policy)
    a = SyncAgent(AgentId(b"\x01" * 16, "agent-a"), sim, config_a,
                  rng=random.Random(seed))
    b = SyncAgent(AgentId(b"\x02" * 16, "agent-b"), sim, config_b,
                  rng=random.Random(seed + 1))
    for ag in (a, b):
        ag.subscribe(doc)
        sim.register(ag.name, ag.on_frame)
        ag.start()
        ag.preset_master(doc, a.ident.uuid)

    def schedule_edits(agent: SyncAgent, tag: str):
        k = 0
        when = 0
        while when < edit_stop:
            def fire(now, ag=agent, t=tag, i=k):
                ag.local_change(doc, fresh_delta(f"{t}:{i}", 1), now)
            sim.call_at(when, fire)
            when += edit_period
            k += 1

    schedule_edits(a, "A")
    schedule_edits(b, "B")

    samples = []
    merges_after_stop = [0]
    orig_complete = a._complete_merge

    def counting_complete(docstate, pair, now):
        if now >= edit_stop:
            merges_after_stop[0] += 1
        return orig_complete(docstate, pair, now)

    a._complete_merge = counting_complete

    def count_by_author(graph):
        from_a = sum(1 for t in graph if t.subject.value.startswith("urn:A:"))
        from_b = sum(1 for t in graph if t.subject.value.startswith("urn:B:"))
        return from_a, from_b

    converged_at = [None]

    def sample(now):
        for ag in (a, b):
            graph = ag.head_graph(doc)
            fa, fb = count_by_author(graph)
            samples.append((now, ag.name, len(graph), fa, fb))

    def probe(now):
        if converged_at[0] is None and a.head_graph(doc) == b.head_graph(doc):
            converged_at[0] = now

    when = 0
    while when <= hard_end:
        sim.call_at(when, sample)
        when += edit_period
    when = edit_stop
    while when <= hard_end:
        sim.call_at(when, probe)
        when += 5
    sim.advance(hard_end)

    _write_csv(
        os.path.join(out_dir, f"never-sync-{policy}.csv"),
        ["time_ms", "agent", "head_triples", "triples_from_a", "triples_from_b"],
        samples,
    )

    # starvation is judged over the edit window; once edits stop the
    # master's final merge reaches b in either policy
    b_rows = [s for s in samples if s[1] == "agent-b" and s[0] <= edit_stop]
    b_never_saw_a = all(r[3] == 0 for r in b_rows)
    t_s = 0
    t_m = merges_after_stop[0] * merge_duration
    post_stop_msgs = sum(1 for e in sim.event_log if e[0] >= edit_stop
                         and e[3] == "revision")
    t_c = post_stop_msgs * latency
    t_u = 0
    t_total = t_s + t_m + t_c + t_u
    report = {
        "policy": policy,
        "b_never_saw_a": b_never_saw_a,
        "converged_at": converged_at[0],
        "edit_stop": edit_stop,
        "T_S": t_s,
        "T_M": t_m,
        "T_C": t_c,
        "T_U": t_u,
        "T_Total": t_total,
    }
    with open(os.path.join(out_dir, f"never-sync-{policy}-report.txt"), "w") as fh:
        for k, v in report.items():
            fh.write(f"{k}={v}\n")
    return report


# ---------------------------------------------------------------------------
# collaborative mapping scenario
# ---------------------------------------------------------------------------

REGIONS = {
    "ds:A": Rect(0, 0, 10, 10),
    "ds:B": Rect(10, 0, 20, 10),
    "ds:C": Rect(20, 0, 30, 10),
}
REGION_D = Rect(5, -5, 25, 15)
MAPPING_DOC = "doc:datasets"


def run_collab_mapping(out_dir, seed: int = 1, chunk_size: int = 4096,
                       payload_bytes: int = 40_000) -> dict:
    """Scripted four-mission scan scenario with one injected transfer
    failure; the operator must end up holding A, C and the remainder
    scan but not B."""
    os.makedirs(out_dir, exist_ok=True)
    sim = NetworkSim(seed, policy=LinkPolicy(("uniform", 2, 8), loss=0.02))
    rng = random.Random(seed)

    names = ["op", "uav0", "uav1", "uav2"]
    idents = {n: AgentId(bytes([i + 1]) * 16, n) for i, n in enumerate(names)}
    agents: dict[str, SyncAgent] = {}
    stores: dict[str, PayloadStore] = {}
    for n in names:
        ag = SyncAgent(idents[n], sim, SyncConfig(), rng=random.Random(seed + hash(n) % 97))
        ag.subscribe(MAPPING_DOC)
        sim.register(n, ag.on_frame)
        ag.start()
        agents[n] = ag
        stores[n] = PayloadStore(os.path.join(out_dir, f"store-{n}"))

    payloads = {uri: rng.randbytes(payload_bytes) for uri in ("ds:A", "ds:B", "ds:C", "ds:D")}

    def has_relation_triples(agent: SyncAgent, uri: str):
        from .datasets import PRED_HAS
        from .triples import Triple, iri
        return {Triple(iri(agent.ident.uri), PRED_HAS, iri(uri))}

    def publish_dataset(agent_name: str, uri: str, coverage: Rect):
        def fire(now):
            agent = agents[agent_name]
            stores[agent_name].commit(uri, POINTS_CLOUD, payloads[uri], chunk_size)
            meta = DatasetMeta(uri, coverage, POINTS_CLOUD)
            rels = [
                DatasetRelation(agent.ident, uri, "has"),
                DatasetRelation(agent.ident, uri, "created_by"),
            ]
            agent.local_change(MAPPING_DOC, Delta.of(dataset_to_triples(meta, rels), ()), now)
        return fire

    transfer_results: dict[str, str] = {}

    def start_transfer(sender_name: str, receiver_name: str, uri: str):
        def fire(now):
            sender_agent = agents[sender_name]
            receiver_agent = agents[receiver_name]
            payload = payload_for_send(stores[sender_name], uri)
            n_chunks = len(split_chunks(payload, chunk_size))
            sender = SenderSession(
                uri, payload, {receiver_agent.ident.uuid},
                send=lambda m: sim.send(encode_frame(m), sender_name),
                schedule=sim.call_later, chunk_size=chunk_size,
            )
            sender_agent.attach_transfer(uri, sender)

            def commit(data, u=uri, rn=receiver_name):
                stores[rn].commit(u, POINTS_CLOUD, data, chunk_size)
                agents[rn].local_change(
                    MAPPING_DOC, Delta.of(has_relation_triples(agents[rn], u), ())
                )
                transfer_results[u] = "committed"

            def abort(u=uri, rn=receiver_name):
                stores[rn].abort(u)
                transfer_results[u] = "aborted"

            receiver = ReceiverSession(
                uri, receiver_agent.ident.uuid, max_chunks=n_chunks,
                send=lambda m: sim.send(encode_frame(m), receiver_name),
                schedule=sim.call_later, commit=commit, abort=abort,
                chunk_size=chunk_size,
            )
            receiver_agent.attach_transfer(uri, receiver)
        return fire

    # missions A, B, C
    sim.call_at(10_000, publish_dataset("uav0", "ds:A", REGIONS["ds:A"]))
    sim.call_at(20_000, publish_dataset("uav1", "ds:B", REGIONS["ds:B"]))
    sim.call_at(30_000, publish_dataset("uav2", "ds:C", REGIONS["ds:C"]))
    # operator downloads C
    sim.call_at(40_000, start_transfer("uav2", "op", "ds:C"))
    # mission D: discovery happens at 50s, transfers for A and B follow;
    # the uav1 link is cut so B cannot arrive
    discovered: dict = {}

    def plan_mission_d(now):
        graph = agents["op"].head_graph(MAPPING_DOC)
        discovered["datasets"] = discover(graph, REGION_D)
    sim.call_at(50_000, plan_mission_d)
    sim.block_pair("uav1", "op", 50_000, 10**9)
    sim.call_at(51_000, start_transfer("uav0", "op", "ds:A"))
    sim.call_at(51_000, start_transfer("uav1", "op", "ds:B"))

    # remainder region scan by uav0, then download by the operator
    remainder: dict = {}

    def compute_remainder(now):
        metas = datasets_from_triples(agents["op"].head_graph(MAPPING_DOC))
        covered = [m.coverage for m in metas.values() if m.uri != "ds:D"]
        remainder["pieces"] = remaining_region(REGION_D, covered)
    sim.call_at(80_000, compute_remainder)
    sim.call_at(90_000, publish_dataset("uav0", "ds:D", REGION_D))
    sim.call_at(100_000, start_transfer("uav0", "op", "ds:D"))

    sim.advance(140_000)

    holding = {uri: stores["op"].has(uri) for uri in ("ds:A", "ds:B", "ds:C", "ds:D")}
    pieces = remainder.get("pieces", [])
    exact_area = sum(p.area for p in pieces)

    rows = [(uri, names_holding)
            for uri in sorted(payloads)
            for names_holding in [",".join(n for n in names if stores[n].has(uri))]]
    _write_csv(os.path.join(out_dir, "holders.csv"), ["dataset", "holders"], rows)
    _write_payload_manifest(out_dir, stores)
    with open(os.path.join(out_dir, "mapping-report.txt"), "w") as fh:
        fh.write(f"discovered={[u for u, _ in discovered.get('datasets', [])]}\n")
        fh.write(f"op_holding={holding}\n")
        fh.write(f"remainder_pieces={len(pieces)} area={exact_area}\n")
        fh.write(f"transfers={transfer_results}\n")

    return {
        "op_holding": holding,
        "discovered": [u for u, _ in discovered.get("datasets", [])],
        "remainder_pieces": pieces,
        "remainder_area": exact_area,
        "transfers": transfer_results,
        "payload_match": {
            uri: stores["op"].has(uri) and stores["op"].load(uri).data() == payloads[uri]
            for uri in ("ds:A", "ds:C", "ds:D")
        },
    }


# ---------------------------------------------------------------------------
# transfer fuzz
# ---------------------------------------------------------------------------


def run_transfer_fuzz(out_dir, runs: int = 200, seed: int = 0,
                      payload_bytes: int = 1024 * 1024, chunk_size: int = 64 * 1024,
                      loss: float = 0.2, duplication: float = 0.05,
                      reorder: float = 0.1, receivers: int = 3) -> dict:
    """Seeded lossy transfers; every run must commit identical bytes on
    every receiver.  Also injects one corrupt-frame run that must abort
    cleanly, and checks the throttle trace bound."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    failures = 0
    tau_violations = 0

    for run_idx in range(runs):
        run_seed = seed + run_idx
        ok, tau_ok, max_tau = _fuzz_one(run_seed, payload_bytes, chunk_size, loss,
                                        duplication, reorder, receivers)
        rows.append((run_seed, int(ok), int(tau_ok), max_tau))
        failures += 0 if ok else 1
        tau_violations += 0 if tau_ok else 1

    abort_clean = _corruption_run(seed)

    _write_csv(
        os.path.join(out_dir, "transfer-fuzz.csv"),
        ["seed", "all_committed_identical", "tau_trace_consistent", "max_tau"],
        rows,
    )
    return {
        "runs": runs,
        "failures": failures,
        "tau_violations": tau_violations,
        "corruption_aborts_cleanly": abort_clean,
    }


def _fuzz_one(run_seed, payload_bytes, chunk_size, loss, duplication, reorder,
              receivers):
    rng = random.Random(run_seed)
    payload = rng.randbytes(payload_bytes)
    n_chunks = len(split_chunks(payload, chunk_size))
    sim = NetworkSim(run_seed, policy=LinkPolicy(("uniform", 1, 10), loss=loss,
                                                 duplication=duplication,
                                                 reorder=reorder))
    names = [f"r{i}" for i in range(receivers)]
    uuids = {n: hashlib.md5(n.encode()).digest() for n in names}
    sessions: dict[str, ReceiverSession] = {}
    sink = {n: [] for n in names}
    fail = {n: False for n in names}

    def receiver_endpoint(name):
        def on_frame(src, frame, now):
            sessions[name].on_msg(decode_frame(frame), now)
        return on_frame

    sim.register("sender", lambda src, frame, now: sender.on_msg(decode_frame(frame), now))
    for n in names:
        sim.register(n, receiver_endpoint(n))
    sender = SenderSession(
        "ds:fuzz", payload, set(uuids.values()),
        send=lambda m: sim.send(encode_frame(m), "sender"),
        schedule=sim.call_later, chunk_size=chunk_size,
    )
    for n in names:
        sessions[n] = ReceiverSession(
            "ds:fuzz", uuids[n], max_chunks=n_chunks,
            send=lambda m, nn=n: sim.send(encode_frame(m), nn),
            schedule=sim.call_later,
            commit=lambda data, nn=n: sink[nn].append(data),
            abort=lambda nn=n: fail.__setitem__(nn, True),
            chunk_size=chunk_size,
        )
    sim.advance(120_000)

    ok = all(sink[n] and sink[n][0] == payload for n in names) and not any(fail.values())
    # tau can only move within the clamped per-step envelope
    tau_ok = all(t >= 0 for t in sender.tau_trace)
    prev = 0
    for t in sender.tau_trace:
        if t < 0 or t > prev + n_chunks * receivers + 64:
            tau_ok = False
        prev = t
    final = sender.state
    fold_upper = final.throttle_down_seen
    if final.tau > fold_upper or final.tau < 0:
        tau_ok = False
    if final.tau < final.throttle_down_seen - final.throttle_up_seen:
        tau_ok = False
    return ok, tau_ok, max(sender.tau_trace or [0])


def _corruption_run(seed):
    """A receiver fed an oversized chunk must error out and abort with
    no partial payload left behind."""
    from .wire import DataMsg

    sim = NetworkSim(seed, policy=LinkPolicy(("fixed", 2)))
    uuid = b"\x09" * 16
    committed, aborted = [], []
    sessions: dict[str, object] = {}

    sim.register("sender", lambda src, frame, now: sessions["tx"].on_msg(decode_frame(frame), now))
    sim.register("rx", lambda src, frame, now: sessions["rx"].on_msg(decode_frame(frame), now))
    sim.register("evil", lambda *a: None)

    payload = bytes(1000)
    sessions["tx"] = SenderSession(
        "ds:bad", payload, {uuid},
        send=lambda m: sim.send(encode_frame(m), "sender"),
        schedule=sim.call_later, chunk_size=100,
    )
    sessions["rx"] = ReceiverSession(
        "ds:bad", uuid, max_chunks=10,
        send=lambda m: sim.send(encode_frame(m), "rx"),
        schedule=sim.call_later,
        commit=committed.append, abort=lambda: aborted.append(True),
        chunk_size=100,
    )

    def inject(now):
        sim.send(encode_frame(DataMsg("ds:bad", 4, b"\xff" * 500)), "evil", "rx")
    sim.call_at(8, inject)
    sim.advance(30_000)
    return bool(aborted) and not committed and sessions["tx"].state.aborted


# ---------------------------------------------------------------------------
# scenario runner + offline verification
# ---------------------------------------------------------------------------


def run_scenario(scenario: Scenario, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    sim = NetworkSim(scenario.seed, policy=scenario.policy,
                     topology=Topology(dict(scenario.groups)))
    documents = sorted({e.document for e in scenario.edits}) or ["doc:default"]
    config = SyncConfig(status_period=scenario.status_period)
    agents: dict[str, SyncAgent] = {}
    for i, name in enumerate(scenario.agents):
        ident = AgentId(bytes([i + 1]) * 16, name)
        ag = SyncAgent(ident, sim, config, rng=random.Random(scenario.seed * 131 + i))
        for uri in documents:
            ag.subscribe(uri)
        sim.register(name, ag.on_frame, group=scenario.groups.get(name, 0))
        ag.start()
        agents[name] = ag

    sim.set_partition(scenario.partitions)
    for group, start, end in scenario.offline:
        sim.set_group_offline(group, start, end)
    for a, b, start, end in scenario.blocks:
        sim.block_pair(a, b, start, end)

    counter = [0]
    for edit in scenario.edits:
        def fire(now, e=edit):
            counter[0] += 1
            agents[e.agent].local_change(
                e.document, fresh_delta(f"{e.agent}:{counter[0]}", e.changes), now
            )
        sim.call_at(edit.time, fire)

    stores = {name: PayloadStore(os.path.join(out_dir, f"store-{name}"))
              for name in scenario.agents}
    rng = random.Random(scenario.seed)
    for tr in scenario.transfers:
        payload = rng.randbytes(tr.total_bytes)

        def fire(now, t=tr, data=payload):
            n_chunks = len(split_chunks(data, t.chunk_size))
            sender = SenderSession(
                t.dataset, data,
                {agents[r].ident.uuid for r in t.receivers},
                send=lambda m: sim.send(encode_frame(m), t.sender),
                schedule=sim.call_later, chunk_size=t.chunk_size,
            )
            agents[t.sender].attach_transfer(t.dataset, sender)
            for r in t.receivers:
                def commit(d, rr=r, u=t.dataset, cs=t.chunk_size):
                    stores[rr].commit(u, POINTS_CLOUD, d, cs)
                receiver = ReceiverSession(
                    t.dataset, agents[r].ident.uuid, max_chunks=n_chunks,
                    send=lambda m, rr=r: sim.send(encode_frame(m), rr),
                    schedule=sim.call_later, commit=commit,
                    abort=lambda rr=r, u=t.dataset: stores[rr].abort(u),
                    chunk_size=t.chunk_size,
                )
                agents[r].attach_transfer(t.dataset, receiver)
        sim.call_at(tr.time, fire)

    sim.advance(scenario.run_until)

    rows = []
    for uri in documents:
        for name, ag in agents.items():
            doc = ag.documents[uri]
            rows.append((uri, name, doc.own_head.hex(),
                         len(ag.head_graph(uri)), int(ag.is_master(uri))))
    _write_csv(os.path.join(out_dir, "summary.csv"),
               ["document", "agent", "head_hash", "head_triples", "is_master"], rows)
    sim.write_event_log(os.path.join(out_dir, "events.csv"))
    _write_payload_manifest(out_dir, stores)
    first = scenario.agents[0]
    for uri in documents:
        safe = uri.replace(":", "_").replace("/", "_")
        gor = agents[first].documents[uri].gor
        save_document(gor, os.path.join(out_dir, f"{safe}.log"),
                      head=agents[first].documents[uri].own_head)
    return {"documents": documents, "agents": list(agents)}


def verify_run(out_dir) -> tuple[bool, list[str]]:
    """Offline re-checks of a run directory; returns (ok, report lines)."""
    lines = []
    ok = True
    checked = 0

    summary = os.path.join(out_dir, "summary.csv")
    if os.path.exists(summary):
        checked += 1
        with open(summary, newline="") as fh:
            rows = list(csv.DictReader(fh))
        by_doc: dict[str, list] = {}
        for r in rows:
            by_doc.setdefault(r.get("document", "doc"), []).append(r)
        for doc_uri, doc_rows in by_doc.items():
            heads = {r["head_hash"] for r in doc_rows}
            masters = sum(int(r["is_master"]) for r in doc_rows)
            conv = len(heads) == 1
            single = masters == 1
            ok &= conv and single
            lines.append(f"[{'PASS' if conv else 'FAIL'}] {doc_uri}: all heads equal")
            lines.append(f"[{'PASS' if single else 'FAIL'}] {doc_uri}: exactly one master")

    logs = [f for f in sorted(os.listdir(out_dir)) if f.endswith(".log")]
    for log in logs:
        checked += 1
        try:
            gor, head = load_document(os.path.join(out_dir, log))
            lines.append(f"[PASS] {log}: hash-verified reload, head {head.hex()[:12]}")
        except Exception as exc:
            ok = False
            lines.append(f"[FAIL] {log}: {exc}")

    events = os.path.join(out_dir, "events.csv")
    if os.path.exists(events):
        checked += 1
        with open(events, newline="") as fh:
            rows = list(csv.DictReader(fh))
        times = [int(r["time_ms"]) for r in rows]
        monotone = all(a <= b for a, b in zip(times, times[1:]))
        ok &= monotone
        lines.append(f"[{'PASS' if monotone else 'FAIL'}] events.csv: timestamps monotone "
                     f"({len(rows)} events)")

    manifest = os.path.join(out_dir, "payloads.csv")
    if os.path.exists(manifest):
        checked += 1
        with open(manifest, newline="") as fh:
            rows = list(csv.DictReader(fh))
        intact = 0
        for r in rows:
            store = PayloadStore(os.path.join(out_dir, f"store-{r['holder']}"))
            try:
                data = store.load(r["dataset"]).data()
                good = hashlib.sha256(data).hexdigest() == r["sha256"]
            except Exception:
                good = False
            ok &= good
            intact += int(good)
        lines.append(f"[{'PASS' if intact == len(rows) else 'FAIL'}] payloads.csv: "
                     f"{intact}/{len(rows)} payloads hash-intact")

    fuzz = os.path.join(out_dir, "transfer-fuzz.csv")
    if os.path.exists(fuzz):
        checked += 1
        with open(fuzz, newline="") as fh:
            rows = list(csv.DictReader(fh))
        clean = all(r["all_committed_identical"] == "1" for r in rows)
        ok &= clean
        lines.append(f"[{'PASS' if clean else 'FAIL'}] transfer-fuzz.csv: "
                     f"{len(rows)} runs committed identical bytes")

    if checked == 0:
        lines.append("[WARN] nothing to verify (empty output directory); vacuously ok")
    return ok, lines
