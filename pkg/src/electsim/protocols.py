"""Node automata: complete-network election, random-walk election, the naive
baseline, and the explicit leader broadcast.

Each ``*_round`` function advances one node by one synchronous round.  State
objects are updated in place and returned together with the outbox, a list of
``(out_port, Token)`` pairs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

from .engine import Kind, ModelConfig, Protocol, Status, Token, Trace, quorum_size, run
from .errors import PreconditionError, ProtocolInvariantError
from .topology import Topology, mixing_time

__all__ = [
    "Params",
    "CandidateState",
    "WalkState",
    "alg1_round",
    "alg2_round",
    "naive_round",
    "CompleteElection",
    "WalkElection",
    "NaiveElection",
    "LeaderBroadcast",
    "BroadcastResult",
    "explicit_broadcast",
    "make_protocol",
]

UNDECIDED = Status.UNDECIDED
ELECTED = Status.ELECTED
NON_ELECTED = Status.NON_ELECTED


@dataclass(frozen=True)
class Params:
    """Values every node knows before round 1."""

    n: int
    candidate_prob: float
    rank_max: int
    quorum: int
    tau: int = 1
    tau_multiplier: float = 1.0
    lazy: bool = False

    @classmethod
    def for_network(cls, n: int, tau: int = 1, tau_multiplier: float = 1.0,
                    lazy: bool = False) -> Params:
        if n < 1:
            raise PreconditionError("network size must be positive")
        prob = 1.0 if n == 1 else min(1.0, 2 * math.log2(n) / n)
        return cls(n, prob, n**4, quorum_size(n), max(1, tau), tau_multiplier, lazy)

    @property
    def walk_rounds(self) -> int:
        """Length of the walk phase: the mixing-time estimate scaled by the multiplier."""
        return max(1, math.ceil(self.tau * self.tau_multiplier))

    def __post_init__(self):
        if not 0 < self.candidate_prob <= 1:
            raise PreconditionError(f"candidate_prob {self.candidate_prob} not in (0, 1]")
        if self.quorum < 1 or self.tau < 1:
            raise PreconditionError("quorum and tau must be >= 1")


# ---------------------------------------------------------------------------
# Complete-network election


@dataclass(slots=True)
class CandidateState:
    degree: int
    status: Status = UNDECIDED
    is_candidate: bool = False
    rank: int | None = None
    referees: int = 0
    win_tally: int = 0


def _flip(state, params: Params, rng) -> bool:
    if rng.random() < params.candidate_prob:
        state.is_candidate = True
        state.rank = rng.randrange(1, params.rank_max + 1)
        return True
    state.status = NON_ELECTED
    return False


def alg1_round(state: CandidateState, rnd: int, inbox, params: Params, rng):
    """Round 1 sends ranks to sampled referees, round 2 notifies the best
    candidate seen, round 3 is the (silent) decision."""
    if rnd == 1:
        if not _flip(state, params, rng):
            return state, []
        s = min(params.quorum, state.degree)
        state.referees = s
        token = Token(Kind.CANDIDATE, state.rank)
        return state, [(p, token) for p in sorted(rng.sample(range(1, state.degree + 1), s))]

    if rnd == 2:
        best_port, best_rank = None, None
        for port, tok in inbox:
            if tok.kind is Kind.CANDIDATE and (best_rank is None or tok.rank > best_rank):
                best_port, best_rank = port, tok.rank
        if best_port is None:
            return state, []
        return state, [(best_port, Token(Kind.NOTIFY))]

    state.win_tally += sum(1 for _, tok in inbox if tok.kind is Kind.NOTIFY)
    if state.is_candidate and state.win_tally == state.referees:
        state.status = ELECTED
    else:
        state.status = NON_ELECTED
    return state, []


class CompleteElection(Protocol):
    name = "alg1"

    def __init__(self, params: Params):
        self.params = params

    @classmethod
    def for_topology(cls, topology: Topology, **overrides) -> CompleteElection:
        params = Params.for_network(topology.n)
        return cls(replace(params, **overrides) if overrides else params)

    def check_topology(self, topology):
        if not topology.is_complete:
            raise PreconditionError("the complete-network election needs a complete topology")
        if topology.n != self.params.n:
            raise PreconditionError("params were built for a different network size")

    def num_rounds(self):
        return 2

    def init_state(self, degree, node_input=None):
        return CandidateState(degree)

    def step(self, state, rnd, inbox, rng):
        return alg1_round(state, rnd, inbox, self.params, rng)

    def decide(self, state, inbox):
        return alg1_round(state, 3, inbox, self.params, None)[0]


# ---------------------------------------------------------------------------
# Random-walk election on general graphs


@dataclass(slots=True)
class WalkState:
    degree: int
    status: Status = UNDECIDED
    is_candidate: bool = False
    rank: int | None = None
    win_tally: int = 0
    winner: int | None = None
    # None while the node's own rank is the best it has seen
    origin: int | None = None
    resident: int = 0
    first_round: int | None = None
    walks_dropped: int = 0
    wins_dropped: int = 0
    late_wins: int = 0


def _absorb_walks(state: WalkState, rnd: int, inbox) -> None:
    top = max(tok.rank for _, tok in inbox if tok.kind is Kind.WALK)
    if state.winner is None or top > state.winner:
        if state.winner is not None:
            state.walks_dropped += state.resident
        state.resident = 0
        state.winner = top
        state.first_round = rnd
        # inbox is sorted by port, so this is the lowest port carrying the new best
        state.origin = next(p for p, tok in inbox if tok.kind is Kind.WALK and tok.rank == top)
    for _, tok in inbox:
        if tok.kind is not Kind.WALK:
            continue
        if tok.rank == state.winner:
            state.resident += tok.count
        else:
            state.walks_dropped += tok.count


def _forward_walks(state: WalkState, params: Params, rng) -> list:
    deg = state.degree
    slots = 2 * deg if params.lazy else deg
    hits = Counter(rng.choices(range(slots), state.resident))
    stay = 0
    out = []
    for slot in sorted(hits):
        if slot >= deg:
            stay += hits[slot]
        else:
            out.append((slot + 1, Token(Kind.WALK, state.winner, hits[slot])))
    state.resident = stay
    return out


def _collect_wins(state: WalkState, inbox) -> int:
    total = 0
    for _, tok in inbox:
        if tok.kind is not Kind.WIN:
            continue
        if state.winner is None or tok.rank > state.winner:
            raise ProtocolInvariantError(
                f"WIN for rank {tok.rank} reached a node whose best rank is {state.winner}"
            )
        if tok.rank < state.winner:
            state.wins_dropped += tok.count
        else:
            total += tok.count
    return total


def _route_wins(state: WalkState, count: int) -> list:
    if count == 0:
        return []
    if state.origin is None:
        state.win_tally += count
        return []
    return [(state.origin, Token(Kind.WIN, state.winner, count))]


def alg2_round(state: WalkState, rnd: int, inbox, params: Params, rng):
    """Walk phase in rounds 1..T, winner notification from round T+1 on,
    where T is the walk length; see :class:`WalkElection` for the schedule."""
    walk_len = params.walk_rounds
    if rnd == 1 and _flip(state, params, rng):
        state.winner = state.rank
        state.first_round = 0
        state.resident = params.quorum
    if inbox and any(tok.kind is Kind.WALK for _, tok in inbox):
        _absorb_walks(state, rnd, inbox)

    if rnd <= walk_len:
        out = _forward_walks(state, params, rng) if state.resident else []
        return state, out

    if rnd == walk_len + 1:
        held, state.resident = state.resident, 0
        return state, _route_wins(state, held)

    return state, _route_wins(state, _collect_wins(state, inbox))


def _alg2_decide(state: WalkState, params: Params) -> WalkState:
    if (state.is_candidate and state.origin is None and state.winner == state.rank
            and state.win_tally == params.quorum):
        state.status = ELECTED
    else:
        state.status = NON_ELECTED
    return state


class WalkElection(Protocol):
    """Random-walk election: ``2T + 1`` message rounds for walk length ``T``."""

    name = "alg2"
    needs_tau = True

    def __init__(self, params: Params):
        self.params = params

    @classmethod
    def for_topology(cls, topology: Topology, tau: int | None = None,
                     tau_multiplier: float = 1.0, **overrides) -> WalkElection:
        if tau is None:
            tau = mixing_time(topology).mixing_time
        params = Params.for_network(topology.n, tau, tau_multiplier, topology.lazy)
        return cls(replace(params, **overrides) if overrides else params)

    def check_topology(self, topology):
        if not topology.is_connected:
            raise PreconditionError("the walk election needs a connected topology")
        if topology.is_bipartite and not self.params.lazy:
            raise PreconditionError("bipartite topology needs lazy walks")
        if topology.n != self.params.n:
            raise PreconditionError("params were built for a different network size")

    def num_rounds(self):
        return 2 * self.params.walk_rounds + 1

    def init_state(self, degree, node_input=None):
        return WalkState(degree)

    def step(self, state, rnd, inbox, rng):
        return alg2_round(state, rnd, inbox, self.params, rng)

    def is_pending(self, state):
        return state.resident > 0

    def decide(self, state, inbox):
        state.late_wins += sum(tok.count for _, tok in inbox if tok.kind is Kind.WIN)
        return _alg2_decide(state, self.params)


# ---------------------------------------------------------------------------
# Naive baseline


@dataclass(slots=True)
class NaiveState:
    status: Status = UNDECIDED


def naive_round(state: NaiveState, rnd: int, inbox, params: Params, rng):
    state.status = ELECTED if rng.random() < 1.0 / params.n else NON_ELECTED
    return state, []


class NaiveElection(Protocol):
    name = "naive"

    def __init__(self, params: Params):
        self.params = params

    @classmethod
    def for_topology(cls, topology: Topology) -> NaiveElection:
        return cls(Params.for_network(topology.n))

    def num_rounds(self):
        return 1

    def init_state(self, degree, node_input=None):
        return NaiveState()

    def step(self, state, rnd, inbox, rng):
        return naive_round(state, rnd, inbox, self.params, rng)


# ---------------------------------------------------------------------------
# Explicit election: tell everyone who won


@dataclass(slots=True)
class BroadcastState:
    degree: int
    status: Status
    identity: int | None = None
    known: int | None = None


class LeaderBroadcast(Protocol):
    """Flood the leader's identity.  On a complete network the leader simply
    sends on every port; elsewhere each node forwards once, skipping the port
    it first heard from.  Node input is ``(status, identity)``."""

    name = "broadcast"

    def __init__(self, n: int, complete: bool):
        self.n = n
        self.complete = complete

    def num_rounds(self):
        return 1 if self.complete else max(1, self.n)

    def init_state(self, degree, node_input=None):
        status, identity = node_input
        return BroadcastState(degree, status, identity)

    def step(self, state, rnd, inbox, rng):
        if rnd == 1 and state.status is ELECTED:
            if state.identity is None:
                state.identity = rng.randrange(1, self.n**4 + 1)
            state.known = state.identity
            token = Token(Kind.LEADER, state.known)
            return state, [(p, token) for p in range(1, state.degree + 1)]
        if state.known is not None or not inbox:
            return state, []
        first_port, tok = inbox[0]
        state.known = tok.rank
        if self.complete:
            return state, []
        token = Token(Kind.LEADER, state.known)
        return state, [(p, token) for p in range(1, state.degree + 1) if p != first_port]

    def decide(self, state, inbox):
        if state.known is None and inbox:
            state.known = inbox[0][1].rank
        return state


@dataclass
class BroadcastResult:
    messages: int
    rounds: int
    identity: int | None
    informed: list[int | None] = field(repr=False)
    trace: Trace = field(repr=False)

    @property
    def all_informed(self) -> bool:
        return all(k is not None and k == self.identity for k in self.informed)


def explicit_broadcast(trace: Trace, topology: Topology, config: ModelConfig | None = None,
                       seed: int = 0) -> BroadcastResult:
    """Extra cost of turning an implicit election into an explicit one."""
    leaders = trace.leader_ids
    if len(leaders) != 1:
        raise PreconditionError(f"explicit broadcast needs exactly one leader, found {len(leaders)}")
    inputs = [
        (status, getattr(state, "rank", None))
        for status, state in zip(trace.statuses, trace.states)
    ]
    proto = LeaderBroadcast(topology.n, topology.is_complete)
    btrace = run(topology, proto, config, seed, inputs=inputs)
    last = max((env.round for env in btrace.envelopes), default=0)
    (leader,) = leaders
    return BroadcastResult(
        messages=len(btrace.envelopes),
        rounds=last,
        identity=btrace.states[leader].known,
        informed=[s.known for s in btrace.states],
        trace=btrace,
    )


def make_protocol(name: str, topology: Topology, tau: int | None = None,
                  tau_multiplier: float = 1.0) -> Protocol:
    if name == "alg1":
        return CompleteElection.for_topology(topology)
    if name == "alg2":
        return WalkElection.for_topology(topology, tau, tau_multiplier)
    if name == "naive":
        return NaiveElection.for_topology(topology)
    raise PreconditionError(f"unknown protocol {name!r}")
