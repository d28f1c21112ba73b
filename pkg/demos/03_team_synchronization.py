"""A team of agents converging over a lossy network.

Five agents share one document across an unreliable broadcast medium
(30 % loss, duplication, reordering).  They elect a merge master by
gossip, publish concurrent edits, and end up with identical graphs.
"""

import random

from graphsync.agent import SyncAgent, SyncConfig
from graphsync.netsim import LinkPolicy, NetworkSim
from graphsync.triples import Delta, triple
from graphsync.wire import AgentId

DOC = "urn:doc:shared"
SEED = 42

sim = NetworkSim(SEED, policy=LinkPolicy(("uniform", 2, 20), loss=0.3,
                                         duplication=0.1, reorder=0.2))
agents = []
for i in range(5):
    ident = AgentId(bytes([i + 1]) * 16, f"robot{i}")
    agent = SyncAgent(ident, sim, SyncConfig(), rng=random.Random(SEED + i))
    agent.subscribe(DOC)
    sim.register(agent.name, agent.on_frame)
    agent.start()
    agents.append(agent)

# let gossip populate the peer tables and elect a master
sim.advance(10_000)
master = [a for a in agents if a.is_master(DOC)]
print("elected master:", master[0].name if master else "none yet")

# every agent edits concurrently
for i, agent in enumerate(agents):
    delta = Delta.of({triple(f"urn:obs:{agent.name}:{k}", "urn:p", "urn:v")
                      for k in range(3)}, ())
    agent.local_change(DOC, delta)
print("5 agents published 3 observations each")

sim.advance(120_000)

graphs = [a.head_graph(DOC) for a in agents]
sizes = [len(g) for g in graphs]
print("head sizes after settling:", sizes)
print("all heads identical:", len(set(graphs)) == 1)
print("masters declared:", sum(a.is_master(DOC) for a in agents))
print("frames delivered:", len(sim.event_log), "- dropped:", sim.dropped)
assert len(set(graphs)) == 1 and sizes[0] == 15
