"""By-need bulk payload exchange: one sender, N receivers.

The protocol logic lives in two pure step functions so it can be tested
without a network; thin session wrappers drive the steps from the
simulator clock.  Chunks are numbered densely from zero; receivers
detect gaps from the sequence numbers, request resends, and steer the
sender's inter-chunk delay with throttle messages (delay level tau,
10 ms per level, never negative).  A transfer either commits the exact
payload bytes or aborts leaving nothing behind.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional

from .wire import (
    AgentId,
    DataMsg,
    ErrorMsg,
    FinishedMsg,
    ReadyMsg,
    ResendRequestMsg,
    ThrottleDownMsg,
    ThrottleUpMsg,
)

CHUNK_SIZE = 64 * 1024
TAU_UNIT_MS = 10
QUEUE_HIGH_WATER = 5
RETRY_ROUNDS = 5
RETRY_INTERVAL_MS = 100
LINGER_STEPS = 20


class PayloadMissing(LookupError):
    pass


class NoHolder(LookupError):
    pass


def split_chunks(data: bytes, chunk_size: int = CHUNK_SIZE) -> list[bytes]:
    if not data:
        return []
    return [data[i : i + chunk_size] for i in range(0, len(data), chunk_size)]


def payload_for_send(store, dataset_uri: str) -> bytes:
    """The Send role's precondition: the dataset must be held locally."""
    if not store.has(dataset_uri):
        raise PayloadMissing(dataset_uri)
    return store.load(dataset_uri).data()


# ---------------------------------------------------------------------------
# Sender (one per transfer)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SenderState:
    dataset: str
    receivers: frozenset[bytes]
    ready_seen: frozenset[bytes] = frozenset()
    streaming: bool = False
    next_sequence: int = 0
    tau: int = 0
    finished: bool = False
    aborted: bool = False
    finished_sent: bool = False
    throttle_up_seen: int = 0
    throttle_down_seen: int = 0


def sender_step(state: SenderState, inbound: Iterable, chunks: list[bytes]):
    """One protocol iteration: drain control traffic (resends answered
    before the next fresh chunk), then stream one chunk or finish.
    Returns (state', outbound)."""
    out = []
    ready = set(state.ready_seen)
    tau = state.tau
    ups, downs = state.throttle_up_seen, state.throttle_down_seen
    aborted = state.aborted

    for msg in inbound:
        if isinstance(msg, ReadyMsg):
            ready.add(msg.receiver)
        elif isinstance(msg, ResendRequestMsg):
            for seq in msg.sequences:
                if 0 <= seq < len(chunks):
                    out.append(DataMsg(state.dataset, seq, chunks[seq]))
        elif isinstance(msg, ThrottleUpMsg):
            tau = max(0, tau - 1)
            ups += 1
        elif isinstance(msg, ThrottleDownMsg):
            tau += 1
            downs += 1
        elif isinstance(msg, ErrorMsg):
            aborted = True

    streaming = state.streaming or ready >= state.receivers
    finished = state.finished
    next_seq = state.next_sequence
    finished_sent = state.finished_sent

    if streaming and not finished and not aborted:
        if next_seq >= len(chunks):
            finished = True
        else:
            out.append(DataMsg(state.dataset, next_seq, chunks[next_seq]))
            next_seq += 1

    if aborted:
        finished = True

    if finished and streaming:
        # re-emitted on every later step so a lost Finished cannot strand
        # a receiver; receivers ignore duplicates
        out.append(FinishedMsg(state.dataset, len(chunks) - 1))
        finished_sent = True

    new_state = replace(
        state,
        ready_seen=frozenset(ready),
        streaming=streaming,
        next_sequence=next_seq,
        tau=tau,
        finished=finished,
        aborted=aborted,
        finished_sent=finished_sent,
        throttle_up_seen=ups,
        throttle_down_seen=downs,
    )
    return new_state, out


# ---------------------------------------------------------------------------
# Receiver (one per receiving agent)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReceiverState:
    dataset: str
    uuid: bytes
    max_chunks: int
    chunk_size: int = CHUNK_SIZE
    ready_sent: bool = False
    received: tuple = ()  # tuple of (seq, bytes), insertion order
    max_seen: int = -1
    last_sequence: Optional[int] = None
    retry_rounds: int = 0
    last_retry_at: int = -(10**9)
    last_gap_request_at: int = -(10**9)
    failed: bool = False
    done: bool = False

    def received_map(self) -> dict[int, bytes]:
        return dict(self.received)


def _missing(received: dict[int, bytes], upto: int) -> tuple[int, ...]:
    return tuple(s for s in range(upto + 1) if s not in received)


def receiver_step(state: ReceiverState, queue: list, now: int):
    """Process one data message plus all control traffic.  Returns
    (state', outbound, leftover_queue).  Callers keep feeding the
    leftover queue back in; its length is the reception queue depth
    that drives throttling."""
    out = []
    if state.failed or state.done:
        return state, out, []

    if not state.ready_sent:
        out.append(ReadyMsg(state.dataset, state.uuid))
        state = replace(state, ready_sent=True, last_retry_at=now)
    elif (
        state.max_seen < 0
        and state.last_sequence is None
        and not queue
        and now - state.last_retry_at >= RETRY_INTERVAL_MS
    ):
        # nothing heard yet: the Ready may have been lost, repeat it
        out.append(ReadyMsg(state.dataset, state.uuid))
        state = replace(state, last_retry_at=now)

    received = state.received_map()
    last_sequence = state.last_sequence
    max_seen = state.max_seen
    failed = False

    control, data_queue = [], []
    for msg in queue:
        (data_queue if isinstance(msg, DataMsg) else control).append(msg)

    retry_rounds = state.retry_rounds
    for msg in control:
        if isinstance(msg, ErrorMsg):
            failed = True
        elif isinstance(msg, FinishedMsg):
            last_sequence = msg.last_sequence
            # renewed contact with the sender: the abort countdown only
            # measures consecutive unanswered retry rounds
            retry_rounds = 0

    took_data = False
    last_gap_request_at = state.last_gap_request_at
    if data_queue and not failed:
        msg = data_queue.pop(0)
        took_data = True
        max_seen = max(max_seen, msg.sequence)
        gaps = tuple(s for s in range(max_seen) if s not in received and s != msg.sequence)
        if gaps and now - last_gap_request_at >= RETRY_INTERVAL_MS:
            out.append(ResendRequestMsg(state.dataset, state.uuid, gaps))
            last_gap_request_at = now
        if len(msg.data) > state.chunk_size or not (0 <= msg.sequence < max(state.max_chunks, 1)):
            out.append(ErrorMsg(state.dataset, state.uuid))
            failed = True
        elif msg.sequence not in received:
            received[msg.sequence] = msg.data
            retry_rounds = 0

        if not failed:
            depth = len(data_queue)
            if depth > QUEUE_HIGH_WATER:
                out.append(ThrottleDownMsg(state.dataset, state.uuid))
            elif depth == 0:
                out.append(ThrottleUpMsg(state.dataset, state.uuid))

    done = False
    last_retry_at = state.last_retry_at
    if not failed and last_sequence is not None:
        missing = _missing(received, last_sequence)
        if not missing:
            done = True
        elif not took_data and now - last_retry_at >= RETRY_INTERVAL_MS:
            if retry_rounds >= RETRY_ROUNDS:
                failed = True
            else:
                out.append(ResendRequestMsg(state.dataset, state.uuid, missing))
                retry_rounds += 1
                last_retry_at = now

    new_state = replace(
        state,
        received=tuple(sorted(received.items())),
        max_seen=max_seen,
        last_sequence=last_sequence,
        retry_rounds=retry_rounds,
        last_retry_at=last_retry_at,
        last_gap_request_at=last_gap_request_at,
        failed=failed,
        done=done,
    )
    return new_state, out, data_queue


def assemble_payload(state: ReceiverState) -> bytes:
    if not state.done:
        raise ValueError("transfer not complete")
    received = state.received_map()
    return b"".join(received[s] for s in range((state.last_sequence or -1) + 1))


# ---------------------------------------------------------------------------
# Sender selection
# ---------------------------------------------------------------------------


def plan_transfer(
    holders: Iterable[AgentId],
    criteria: Mapping[bytes, tuple[float, float]] | None = None,
    receivers: Iterable[AgentId] = (),
) -> tuple[AgentId, tuple[AgentId, ...]]:
    """Pick the sending agent: highest declared bandwidth, then lowest
    load, then lowest uuid.  Yields the two-node send/receive task pair."""
    holders = sorted(holders, key=lambda a: a.uuid)
    if not holders:
        raise NoHolder("no agent holds the payload")
    criteria = criteria or {}

    def score(agent: AgentId):
        bandwidth, load = criteria.get(agent.uuid, (0.0, 0.0))
        return (-bandwidth, load, agent.uuid)

    sender = min(holders, key=score)
    return sender, tuple(receivers)


# ---------------------------------------------------------------------------
# Simulator-driven sessions
# ---------------------------------------------------------------------------


class SenderSession:
    """Drives sender_step on the simulator clock.  The iteration period
    is 1 ms plus tau sleep units; after Finished the session lingers,
    re-answering resend requests, for LINGER_STEPS slow steps.  Giving
    up on receivers that never report Ready bounds the session."""

    WAIT_READY_TIMEOUT_MS = 10_000

    def __init__(self, dataset: str, payload: bytes, receivers, send, schedule,
                 chunk_size: int = CHUNK_SIZE):
        self.chunks = split_chunks(payload, chunk_size)
        self.state = SenderState(dataset, frozenset(receivers))
        self.inbound: list = []
        self.send = send
        self.schedule = schedule
        self.linger_left = LINGER_STEPS
        self.closed = False
        self.started_at: Optional[int] = None
        self.tau_trace: list[int] = []
        self.schedule(0, self._step)

    def on_msg(self, msg, now: int) -> None:
        self.inbound.append(msg)

    def _step(self, now: int) -> None:
        if self.closed:
            return
        if self.started_at is None:
            self.started_at = now
        inbound, self.inbound = self.inbound, []
        self.state, out = sender_step(self.state, inbound, self.chunks)
        self.tau_trace.append(self.state.tau)
        for msg in out:
            self.send(msg)
        if not self.state.streaming and now - self.started_at > self.WAIT_READY_TIMEOUT_MS:
            self.closed = True
            return
        if self.state.finished_sent:
            self.linger_left -= 1
            if self.linger_left <= 0:
                self.closed = True
                return
            self.schedule(RETRY_INTERVAL_MS, self._step)
        else:
            self.schedule(1 + self.state.tau * TAU_UNIT_MS, self._step)


class ReceiverSession:
    """Drives receiver_step; commits via commit(bytes) on success or
    abort() on failure, exactly once.  A silent link (nothing heard for
    IDLE_TIMEOUT_MS) also counts as failure."""

    STEP_MS = 1
    IDLE_TIMEOUT_MS = 5000

    def __init__(self, dataset: str, uuid: bytes, max_chunks: int, send, schedule,
                 commit: Callable[[bytes], None], abort: Callable[[], None],
                 chunk_size: int = CHUNK_SIZE):
        self.state = ReceiverState(dataset, uuid, max_chunks, chunk_size)
        self.queue: list = []
        self.send = send
        self.schedule = schedule
        self.commit = commit
        self.abort = abort
        self.finalized = False
        self.last_heard: Optional[int] = None
        self.schedule(0, self._step)

    def on_msg(self, msg, now: int) -> None:
        self.queue.append(msg)
        self.last_heard = now

    def _step(self, now: int) -> None:
        if self.finalized:
            return
        if self.last_heard is None:
            self.last_heard = now
        self.state, out, self.queue = receiver_step(self.state, self.queue, now)
        for msg in out:
            self.send(msg)
        if self.state.done:
            self.finalized = True
            self.commit(assemble_payload(self.state))
            return
        if self.state.failed or now - self.last_heard > self.IDLE_TIMEOUT_MS:
            self.finalized = True
            self.abort()
            return
        self.schedule(self.STEP_MS, self._step)
