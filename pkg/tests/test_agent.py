import random

import pytest

from graphsync.agent import POLICY_MERGE_ONLY, SyncAgent, SyncConfig
from graphsync.netsim import LinkPolicy, NetworkSim, Topology
from graphsync.triples import Delta, triple
from graphsync.wire import AgentId, RevisionRequestMsg, StatusMsg, VoteMsg, decode_frame, encode_frame

DOC = "doc:map"


def make_team(n, seed=1, policy=None, config=None, groups=None, start_times=None):
    sim = NetworkSim(seed, policy=policy or LinkPolicy(("fixed", 5)),
                     topology=Topology(dict(groups or {})))
    agents = []
    for i in range(n):
        ident = AgentId(bytes([i + 1]) * 16, f"a{i}")
        cfg = config or SyncConfig()
        agent = SyncAgent(ident, sim, cfg, rng=random.Random(seed * 100 + i),
                          start_time=(start_times or {}).get(i, 0))
        agent.subscribe(DOC)
        sim.register(agent.name, agent.on_frame, group=(groups or {}).get(f"a{i}", 0))
        agent.start()
        agents.append(agent)
    return sim, agents


def fresh_triples(tag, n):
    return frozenset(triple(f"urn:{tag}:{i}", "urn:p", f"urn:o:{i}") for i in range(n))


def converged(agents, uri=DOC):
    graphs = {a.head_graph(uri) for a in agents}
    return len(graphs) == 1


class TestLocalChangePolicy:
    def test_change_queued_before_any_master_known(self):
        sim, (a, b) = make_team(2)
        rev = a.local_change(DOC, Delta.of(fresh_triples("a", 2), ()))
        assert rev.local
        assert a.documents[DOC].local_queue == [rev.hash]

    def test_change_published_when_synced_with_master(self):
        sim, (a, b) = make_team(2)
        for agent in (a, b):
            agent.preset_master(DOC, a.ident.uuid)
        rev = b.local_change(DOC, Delta.of(fresh_triples("b", 1), ()))
        assert not rev.local
        assert b.documents[DOC].local_queue == []
        sim.advance(50)
        assert rev.hash in a.documents[DOC].gor

    def test_three_changes_while_desynced_form_chain(self):
        sim, (a, b) = make_team(2)
        for i in range(3):
            b.local_change(DOC, Delta.of(fresh_triples(f"b{i}", 1), ()))
        doc = b.documents[DOC]
        assert len(doc.local_queue) == 3
        chain = doc.gor.path_revisions(doc.gor.root.hash, doc.own_head)
        assert [r.hash for r in chain] == doc.local_queue

    def test_merge_only_policy_always_publishes(self):
        sim, (a, b) = make_team(2, config=SyncConfig(policy=POLICY_MERGE_ONLY))
        rev = b.local_change(DOC, Delta.of(fresh_triples("b", 1), ()))
        assert not rev.local


class TestExternalRevisions:
    def test_duplicate_revision_msg_is_noop(self):
        sim, (a, b) = make_team(2)
        for agent in (a, b):
            agent.preset_master(DOC, a.ident.uuid)
        rev = b.local_change(DOC, Delta.of(fresh_triples("b", 1), ()))
        sim.advance(100)
        before = len(a.documents[DOC].gor)
        from graphsync.wire import RevisionMsg
        a.on_frame("a1", encode_frame(RevisionMsg(DOC, rev)), 200)
        assert len(a.documents[DOC].gor) == before

    def test_missing_parent_requested_and_healed(self):
        sim, (a, b) = make_team(2)
        for agent in (a, b):
            agent.preset_master(DOC, a.ident.uuid)
        r1 = b.local_change(DOC, Delta.of(fresh_triples("b1", 1), ()))
        r2 = b.local_change(DOC, Delta.of(fresh_triples("b2", 1), ()))
        # deliver only the child directly, bypassing the network
        from graphsync.wire import RevisionMsg
        a.on_frame("a1", encode_frame(RevisionMsg(DOC, r2)), 1)
        doc = a.documents[DOC]
        assert r1.hash in doc.outstanding
        sim.advance(2000)
        assert r1.hash in doc.gor and doc.gor.resolved(r2.hash)

    def test_master_merges_until_single_head(self):
        sim, (a, b, c) = make_team(3)
        for agent in (a, b, c):
            agent.preset_master(DOC, a.ident.uuid)
        b.local_change(DOC, Delta.of(fresh_triples("b", 2), ()))
        c.local_change(DOC, Delta.of(fresh_triples("c", 2), ()))
        a.local_change(DOC, Delta.of(fresh_triples("a", 2), ()))
        sim.advance(5000)
        doc = a.documents[DOC]
        assert len(doc.gor.heads()) == 1
        assert converged((a, b, c))
        assert a.head_graph(DOC) == fresh_triples("a", 2) | fresh_triples("b", 2) | fresh_triples("c", 2)

    def test_rebase_after_merge_revision(self):
        sim, (a, b) = make_team(2)
        for agent in (a, b):
            agent.preset_master(DOC, a.ident.uuid)
        # both publish a first revision; master merges them; b makes a
        # change after seeing the master's head move but before the
        # merge revision arrives, so it must queue
        a.local_change(DOC, Delta.of(fresh_triples("a", 1), ()))
        b.local_change(DOC, Delta.of(fresh_triples("b", 1), ()))
        sim.advance(7)
        queued = b.local_change(DOC, Delta.of(fresh_triples("b2", 1), ()))
        assert queued.local and b.documents[DOC].local_queue
        sim.advance(5000)
        assert not b.documents[DOC].local_queue
        assert converged((a, b))
        assert fresh_triples("b2", 1) <= b.head_graph(DOC)


class TestStatusHandling:
    def test_status_with_unknown_head_triggers_request(self):
        sim, (a, b) = make_team(2)
        outsider = AgentId(b"\x77" * 16, "x")
        fake_head = b"\x99" * 64
        a.on_frame("x", encode_frame(StatusMsg(outsider, DOC, fake_head, False)), 10)
        assert fake_head in a.documents[DOC].outstanding

    def test_idle_agent_sends_one_status_per_period(self):
        sim, (a, b) = make_team(2)
        sim.advance(9999)
        statuses = [e for e in sim.event_log if e[3] == "status" and e[1] == "a0"]
        # broadcast to one peer; 10 periods at t=0..9000
        assert len(statuses) == 10

    def test_peer_expiry_clears_master_and_triggers_election(self):
        sim, (a, b) = make_team(2)
        for agent in (a, b):
            agent.preset_master(DOC, b.ident.uuid)
        sim.advance(2500)   # peers know each other
        doc_a = a.documents[DOC]
        assert b.ident.uuid in doc_a.peers
        # silence b entirely
        sim.block_pair("a0", "a1", 2500, 10**9)
        sim.advance(9000)
        assert b.ident.uuid not in doc_a.peers
        assert doc_a.master != b.ident.uuid
        # a is alone and lowest uuid: it elects itself
        sim.advance(12000)
        assert doc_a.master == a.ident.uuid


class TestRevisionRequests:
    def test_master_request_answered_by_author(self):
        sim, (a, b) = make_team(2)
        for agent in (a, b):
            agent.preset_master(DOC, a.ident.uuid)
        b.documents[DOC].master_head = b"\x55" * 64   # master is ahead, b desynced
        local = b.local_change(DOC, Delta.of(fresh_triples("b", 1), ()))
        assert local.local
        msg = RevisionRequestMsg(DOC, a.ident.uuid, (local.hash,))
        b.on_frame("a0", encode_frame(msg), 100)
        sim.advance(200)
        assert local.hash in a.documents[DOC].gor
        assert not b.documents[DOC].gor.get(local.hash).local

    def test_nonmaster_request_to_nonmaster_is_silent(self):
        sim, (a, b, c) = make_team(3)
        for agent in (a, b, c):
            agent.preset_master(DOC, a.ident.uuid)
        rev = b.local_change(DOC, Delta.of(fresh_triples("b", 1), ()))
        sim.advance(100)
        sent_before = len(sim.event_log)
        msg = RevisionRequestMsg(DOC, c.ident.uuid, (rev.hash,))
        b.on_frame("a2", encode_frame(msg), 200)
        sim.advance(400)
        kinds = [e[3] for e in sim.event_log[sent_before:] if e[1] == "a1"]
        assert "revision" not in kinds

    def test_master_answers_any_request(self):
        sim, (a, b) = make_team(2)
        for agent in (a, b):
            agent.preset_master(DOC, a.ident.uuid)
        rev = a.local_change(DOC, Delta.of(fresh_triples("a", 1), ()))
        sim.advance(100)
        msg = RevisionRequestMsg(DOC, b.ident.uuid, (rev.hash,))
        before = len(sim.event_log)
        a.on_frame("a1", encode_frame(msg), 150)
        sim.advance(300)
        kinds = [e[3] for e in sim.event_log[before:] if e[1] == "a0"]
        assert "revision" in kinds

    def test_peer_answers_for_partitioned_author(self):
        sim, (a, b, c) = make_team(3)
        for agent in (a, b, c):
            agent.preset_master(DOC, a.ident.uuid)
        rev = c.local_change(DOC, Delta.of(fresh_triples("c", 1), ()))
        sim.advance(100)   # everyone has it (c published: c synced with master)
        assert rev.hash in b.documents[DOC].gor
        # now c vanishes from b's peer table
        sim.block_pair("a1", "a2", 100, 10**9)
        sim.block_pair("a0", "a2", 100, 10**9)
        sim.advance(8000)
        assert c.ident.uuid not in b.documents[DOC].peers
        before = len(sim.event_log)
        msg = RevisionRequestMsg(DOC, a.ident.uuid, (rev.hash,))
        b.on_frame("a0", encode_frame(msg), sim.clock())
        sim.advance(sim.clock() + 200)
        kinds = [e[3] for e in sim.event_log[before:] if e[1] == "a1"]
        assert "revision" in kinds


class TestElection:
    def test_single_agent_elects_itself(self):
        sim, agents = make_team(1)
        sim.advance(10_000)
        assert agents[0].documents[DOC].master == agents[0].ident.uuid

    def test_fresh_start_all_vote_lowest_uuid_earliest(self):
        # zero latency and simultaneous start: every peer table shows the
        # same connected-since, so the lowest uuid wins everywhere
        sim, agents = make_team(3, policy=LinkPolicy(("fixed", 0)))
        sim.advance(10_000)
        masters = {ag.documents[DOC].master for ag in agents}
        assert masters == {agents[0].ident.uuid}
        declared = [ag for ag in agents if ag.is_master(DOC)]
        assert len(declared) == 1 and declared[0] is agents[0]

    def test_two_masters_trigger_election_to_one(self):
        sim, (a, b) = make_team(2)
        a.preset_master(DOC, a.ident.uuid)
        b.preset_master(DOC, b.ident.uuid)
        sim.advance(15_000)
        assert a.documents[DOC].master == b.documents[DOC].master
        assert sum(ag.is_master(DOC) for ag in (a, b)) == 1

    def test_mutual_vote_tie_resolves(self):
        sim, (a, b) = make_team(2, seed=7)
        a.documents[DOC].last_voted_for = b.ident.uuid
        b.documents[DOC].last_voted_for = a.ident.uuid
        sim.advance(30_000)
        assert a.documents[DOC].master == b.documents[DOC].master
        assert a.documents[DOC].master is not None

    def test_tie_termination_200_scenarios(self):
        # the full 1000-scenario sweep runs in the acceptance suite
        worst = 0
        for seed in range(200):
            sim, (a, b) = make_team(2, seed=seed)
            a.documents[DOC].last_voted_for = b.ident.uuid
            b.documents[DOC].last_voted_for = a.ident.uuid
            sim.advance(120_000)
            doc_a, doc_b = a.documents[DOC], b.documents[DOC]
            assert doc_a.election is None and doc_b.election is None
            assert doc_a.master == doc_b.master and doc_a.master is not None
            worst = max(worst, a.stats["max_election_round"], b.stats["max_election_round"])
        assert worst <= 20

    def test_vote_message_joins_election(self):
        sim, (a, b) = make_team(2)
        vote = VoteMsg(DOC, b.ident.uuid, b.ident.uuid, 0, 0, 0)
        a.on_frame("a1", encode_frame(vote), 10)
        assert a.documents[DOC].election is not None
        assert a.ident.uuid in a.documents[DOC].election.ballots


class TestConvergenceAfterElection:
    def test_two_agents_full_stack_converge(self):
        sim, (a, b) = make_team(2)
        sim.advance(8000)        # election settles
        a.local_change(DOC, Delta.of(fresh_triples("a", 3), ()))
        b.local_change(DOC, Delta.of(fresh_triples("b", 3), ()))
        sim.advance(40_000)
        assert converged((a, b))
        assert fresh_triples("a", 3) | fresh_triples("b", 3) == a.head_graph(DOC)

    def test_lossy_links_still_converge(self):
        sim, agents = make_team(
            4, seed=3,
            policy=LinkPolicy(("uniform", 2, 20), loss=0.3, duplication=0.1, reorder=0.2),
        )
        sim.advance(12_000)
        for i, ag in enumerate(agents):
            ag.local_change(DOC, Delta.of(fresh_triples(f"t{i}", 2), ()))
        sim.advance(240_000)
        assert converged(agents)
        union = frozenset()
        for i in range(4):
            union |= fresh_triples(f"t{i}", 2)
        assert agents[0].head_graph(DOC) == union
