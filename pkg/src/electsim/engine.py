"""Synchronous round-based execution over an anonymous port-numbered network.

Messages sent in round ``r`` are delivered at the start of round ``r + 1``.
A protocol only ever sees its own state, the round number, its inbox as
``(in_port, token)`` pairs and its private coin; it answers with
``(out_port, token)`` pairs.  Node indices and neighbor identities stay inside
the engine.

After the last scheduled round the engine performs one final delivery and
calls ``decide`` on every node; that step sends nothing and is not counted as a
round.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from operator import itemgetter
from typing import Any, Callable, NamedTuple, Sequence

from .errors import ModelViolationError, ProtocolInvariantError, RunawayError
from .seeding import NodeRandom, node_keys
from .topology import Topology

__all__ = [
    "Status",
    "Kind",
    "Token",
    "Envelope",
    "ModelConfig",
    "Trace",
    "Protocol",
    "log2_ceil",
    "quorum_size",
    "token_bits",
    "run",
    "message_count",
    "round_count",
    "check_congest",
    "dumps_trace",
]


class Status(enum.Enum):
    UNDECIDED = "UNDECIDED"
    ELECTED = "ELECTED"
    NON_ELECTED = "NON-ELECTED"


class Kind(enum.IntEnum):
    """Token type; the value is the 3-bit wire tag."""

    CANDIDATE = 1
    NOTIFY = 2
    WALK = 3
    WIN = 4
    LEADER = 5


class Token(NamedTuple):
    kind: Kind
    rank: int | None = None
    count: int | None = None


class Envelope(NamedTuple):
    round: int
    src: int
    out_port: int
    payload: Token
    bit_size: int
    # Instrumentation only; never shown to protocols.
    dst: int
    in_port: int


TAG_BITS = 3


def log2_ceil(n: int) -> int:
    """``ceil(log2 n)``, floored at 1 so that tiny networks still get a budget."""
    return max(1, (n - 1).bit_length())


def quorum_size(n: int) -> int:
    """``2 * ceil(sqrt(n * log2 n))``, at least 1."""
    if n <= 1:
        return 1
    return 2 * math.ceil(math.sqrt(n * math.log2(n)))


def _count_field_bits(n: int) -> int:
    return max(1, quorum_size(n).bit_length())


def token_bits(token: Token, n: int) -> int:
    """Canonical encoding length of ``token`` in a network of ``n`` nodes.

    A count that does not fit the fixed count field (only possible under rank
    ties) is charged its actual bit length.
    """
    kind = token.kind
    if kind is Kind.NOTIFY:
        return TAG_BITS
    rank_bits = 4 * log2_ceil(n)
    if kind is Kind.CANDIDATE or kind is Kind.LEADER:
        return TAG_BITS + rank_bits
    count_bits = max(_count_field_bits(n), int(token.count).bit_length())
    return TAG_BITS + rank_bits + count_bits


@dataclass(frozen=True)
class ModelConfig:
    model: str = "CONGEST"
    c: int = 8
    max_rounds: int = 100_000

    def __post_init__(self):
        if self.model not in ("CONGEST", "LOCAL"):
            raise ValueError(f"model must be CONGEST or LOCAL, got {self.model!r}")
        if self.c < 1:
            raise ValueError("bit budget factor c must be >= 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    def budget(self, n: int) -> int:
        return self.c * log2_ceil(n)


@dataclass
class Trace:
    n: int
    envelopes: list[Envelope]
    rounds: int
    statuses: list[Status]
    states: list[Any] = field(default_factory=list, repr=False)

    @property
    def leader_ids(self) -> set[int]:
        return {u for u, s in enumerate(self.statuses) if s is Status.ELECTED}


class Protocol:
    """Node automaton interface driven by :func:`run`.

    ``step`` receives the node's state, the round number (1-based), the inbox
    sorted by in-port, and the node's private coin.  It returns the updated
    state and a list of ``(out_port, token)`` pairs.  A node is stepped in
    round 1, and afterwards only when it has mail or ``is_pending`` reported
    unfinished work; stepping an idle node must be a no-op.
    """

    name = "protocol"
    needs_tau = False

    def check_topology(self, topology: Topology) -> None:
        pass

    def num_rounds(self) -> int:
        raise NotImplementedError

    def init_state(self, degree: int, node_input: Any = None) -> Any:
        raise NotImplementedError

    def step(self, state, rnd: int, inbox, rng: NodeRandom):
        raise NotImplementedError

    def is_pending(self, state) -> bool:
        return False

    def decide(self, state, inbox):
        return state

    def status(self, state) -> Status:
        return state.status


Probe = Callable[[int, Sequence[Any], Sequence[Envelope]], None]


def run(
    topology: Topology,
    protocol: Protocol,
    config: ModelConfig | None = None,
    seed: int = 0,
    *,
    inputs: Sequence[Any] | None = None,
    probe: Probe | None = None,
) -> Trace:
    """Execute ``protocol`` on ``topology`` and return the full trace.

    ``inputs`` optionally hands each node a private initial value (used to
    chain a broadcast after an election).  ``probe(round, states, sent)`` is
    called after every round for instrumentation and may not mutate anything.
    """
    config = config or ModelConfig()
    n = topology.n
    protocol.check_topology(topology)
    total = protocol.num_rounds()
    if total > config.max_rounds:
        raise RunawayError(
            f"{protocol.name} schedules {total} rounds, max_rounds is {config.max_rounds}"
        )
    congest = config.model == "CONGEST"
    budget = config.budget(n)
    bits_cache: dict[Token, int] = {}

    dst_arr, inport_arr = topology.arc_table
    dst_of = memoryview(dst_arr)
    inport_of = memoryview(inport_arr)
    offsets = topology.offsets.tolist()
    degrees = topology.degrees.tolist()

    states = [
        protocol.init_state(degrees[u], None if inputs is None else inputs[u]) for u in range(n)
    ]
    keys = node_keys(seed, n)
    rngs: list[NodeRandom | None] = [None] * n
    envelopes: list[Envelope] = []
    inbox: dict[int, list] = {}
    pending: set[int] = set()
    by_port = itemgetter(0)
    step = protocol.step
    # skip the per-node hook when the protocol keeps the no-op default
    is_pending = None if type(protocol).is_pending is Protocol.is_pending else protocol.is_pending

    for rnd in range(1, total + 1):
        if rnd == 1:
            stepping = range(n)
        else:
            stepping = sorted(pending.union(inbox))
        next_inbox: dict[int, list] = {}
        next_pending: set[int] = set()
        sent_from = len(envelopes)
        for u in stepping:
            box = inbox.get(u, ())
            if len(box) > 1:
                box.sort(key=by_port)
            rng = rngs[u]
            if rng is None:
                rng = rngs[u] = NodeRandom(keys[u])
            state, outbox = step(states[u], rnd, box, rng)
            states[u] = state
            if is_pending is not None and is_pending(state):
                next_pending.add(u)
            if not outbox:
                continue
            deg = degrees[u]
            base = offsets[u] - 1
            if congest and len(outbox) > 1 and len({p for p, _ in outbox}) != len(outbox):
                raise ModelViolationError(
                    f"round {rnd}: node {u} sent two messages on one port", rnd, u
                )
            for port, token in outbox:
                if not 1 <= port <= deg:
                    raise ModelViolationError(
                        f"round {rnd}: node {u} used port {port} of {deg}", rnd, u, port
                    )
                bits = bits_cache.get(token)
                if bits is None:
                    bits = bits_cache[token] = token_bits(token, n)
                if congest and bits > budget:
                    raise ModelViolationError(
                        f"round {rnd}: {bits}-bit message on edge ({u}, port {port}) "
                        f"exceeds budget {budget}",
                        rnd, u, port,
                    )
                arc = base + port
                v = dst_of[arc]
                envelopes.append(Envelope(rnd, u, port, token, bits, v, inport_of[arc]))
                slot = next_inbox.get(v)
                if slot is None:
                    next_inbox[v] = [(inport_of[arc], token)]
                else:
                    slot.append((inport_of[arc], token))
        if probe is not None:
            probe(rnd, states, envelopes[sent_from:])
        inbox = next_inbox
        pending = next_pending

    statuses = []
    for u in range(n):
        box = inbox.get(u, ())
        if len(box) > 1:
            box.sort(key=by_port)
        states[u] = protocol.decide(states[u], box)
        status = protocol.status(states[u])
        if status is Status.UNDECIDED:
            raise ProtocolInvariantError(f"node {u} is still undecided after the schedule")
        statuses.append(status)
    return Trace(n, envelopes, total, statuses, states)


def message_count(trace: Trace) -> int:
    return len(trace.envelopes)


def round_count(trace: Trace) -> int:
    return trace.rounds


def check_congest(trace: Trace, n: int, c: int) -> bool:
    """True iff every message fits ``c * ceil(log2 n)`` bits and no directed edge
    carries two messages in one round."""
    budget = c * log2_ceil(n)
    seen = set()
    for env in trace.envelopes:
        if env.bit_size > budget:
            return False
        edge = (env.round, env.src, env.out_port)
        if edge in seen:
            return False
        seen.add(edge)
    return True


def dumps_trace(trace: Trace) -> str:
    """One JSON line per envelope: round, src, port, type, rank, count."""
    lines = []
    for env in trace.envelopes:
        tok = env.payload
        lines.append(json.dumps({
            "round": env.round,
            "src": env.src,
            "port": env.out_port,
            "type": tok.kind.name,
            "rank": tok.rank,
            "count": tok.count,
        }, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)
