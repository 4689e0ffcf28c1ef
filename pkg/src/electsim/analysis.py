"""Trial aggregation, influence-cloud tracing, collision oracles and the
per-trace invariant audits for the random-walk election."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import comb
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import seeding
from .engine import Kind, ModelConfig, Protocol, Status, Trace, run
from .errors import ElectionError, PreconditionError
from .topology import Topology

__all__ = [
    "TrialRecord",
    "ExperimentReport",
    "wilson_interval",
    "trial_seed",
    "estimate_success",
    "Cloud",
    "InfluenceCloudSet",
    "influence_clouds",
    "no_common_referee_exact",
    "MCEstimate",
    "collision_mc",
    "sum_squares",
    "WalkAudit",
    "audit_walk_election",
    "multi_leader_explained",
]


# ---------------------------------------------------------------------------
# Experiment reports


class TrialRecord(NamedTuple):
    seed: int
    leaders: int
    messages: int
    rounds: int


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise PreconditionError("need at least one trial")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return centre - half, centre + half


@dataclass
class ExperimentReport:
    protocol: str
    family: str
    n: int
    trials: int
    master_seed: int
    unique_leader_freq: float
    zero_leader_freq: float
    multi_leader_freq: float
    msg_quantiles: dict[str, float]
    msg_mean: float
    round_max: int
    ci_95: float
    tau: int | None = None
    records: list[TrialRecord] = field(default_factory=list, repr=False)

    @classmethod
    def from_records(cls, records: Sequence[TrialRecord], *, protocol: str, family: str,
                     n: int, master_seed: int, tau: int | None = None) -> ExperimentReport:
        t = len(records)
        if t == 0:
            raise PreconditionError("no trials to aggregate")
        unique = sum(1 for r in records if r.leaders == 1)
        zero = sum(1 for r in records if r.leaders == 0)
        multi = t - unique - zero
        msgs = np.array([r.messages for r in records], dtype=float)
        p50, p90, p99 = np.quantile(msgs, [0.5, 0.9, 0.99])
        lo, hi = wilson_interval(unique, t)
        return cls(
            protocol=protocol,
            family=family,
            n=n,
            trials=t,
            master_seed=master_seed,
            unique_leader_freq=unique / t,
            zero_leader_freq=zero / t,
            multi_leader_freq=multi / t,
            msg_quantiles={"p50": float(p50), "p90": float(p90), "p99": float(p99),
                           "max": float(msgs.max())},
            msg_mean=float(msgs.mean()),
            round_max=max(r.rounds for r in records),
            ci_95=(hi - lo) / 2,
            tau=tau,
            records=list(records),
        )

    def to_text(self) -> str:
        doc = asdict(self)
        doc.pop("records")
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TrialRecord._fields)
        writer.writerows(self.records)
        return buf.getvalue()


def trial_seed(master_seed: int, index: int) -> int:
    return seeding.derive_seed(master_seed, seeding.TRIAL, index)


TrialHook = Callable[[int, Trace], None]


def _run_trials(topology, protocol, config, master_seed, indices, hook=None):
    out = []
    for i in indices:
        seed = trial_seed(master_seed, i)
        try:
            trace = run(topology, protocol, config, seed)
        except ElectionError as err:
            err.trial = i
            err.args = (f"trial {i} (seed {seed}): {err.args[0] if err.args else ''}",)
            raise
        if hook is not None:
            hook(i, trace)
        out.append(TrialRecord(seed, len(trace.leader_ids), len(trace.envelopes), trace.rounds))
    return out


def estimate_success(
    topology: Topology,
    protocol: Protocol,
    config: ModelConfig | None = None,
    trials: int = 1,
    master_seed: int = 0,
    *,
    workers: int = 1,
    hook: TrialHook | None = None,
) -> ExperimentReport:
    """Run ``trials`` independently seeded executions and aggregate them.

    Trial ``i`` always uses the same seed, so the report does not depend on
    ``workers``.  ``hook(i, trace)`` sees every trace; it forces ``workers=1``.
    """
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    config = config or ModelConfig()
    if workers <= 1 or hook is not None:
        records = _run_trials(topology, protocol, config, master_seed, range(trials), hook)
    else:
        chunks = [range(k, trials, workers) for k in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            futures = [
                pool.submit(_run_trials, topology, protocol, config, master_seed, c)
                for c in chunks
            ]
            parts = [f.result() for f in futures]
        records = [None] * trials
        for chunk, part in zip(chunks, parts):
            for i, rec in zip(chunk, part):
                records[i] = rec
    params = getattr(protocol, "params", None)
    tau = params.walk_rounds if protocol.needs_tau and params is not None else None
    return ExperimentReport.from_records(
        records, protocol=protocol.name, family=topology.family, n=topology.n,
        master_seed=master_seed, tau=tau,
    )


# ---------------------------------------------------------------------------
# Influence clouds


class Cloud(NamedTuple):
    initiator: int
    members: tuple[int, ...]
    join_rounds: tuple[int, ...]


@dataclass
class InfluenceCloudSet:
    rounds: list[tuple[Cloud, ...]]
    disjoint: bool

    @property
    def final(self) -> tuple[Cloud, ...]:
        return self.rounds[-1] if self.rounds else ()

    @property
    def initiators(self) -> list[int]:
        return [c.initiator for c in self.final]


def influence_clouds(trace: Trace) -> InfluenceCloudSet:
    """Clouds of every initiator after each round of the communication graph.

    A node is an initiator when it sends its first message while still
    isolated in the communication graph of the previous round.  Members are
    listed in join order; ties within a round are broken by node index.
    """
    by_round: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for env in trace.envelopes:
        by_round[env.round].append((env.src, env.dst))
    last = max(by_round, default=0)
    adj: dict[int, set[int]] = defaultdict(set)
    touched: set[int] = set()
    reach: dict[int, dict[int, int]] = {}
    snapshots: list[tuple[Cloud, ...]] = []
    for r in range(1, max(last, trace.rounds) + 1):
        edges = by_round.get(r, [])
        for u in sorted({u for u, _ in edges}):
            if u not in touched:
                reach[u] = {u: r}
        for u, v in edges:
            adj[u].add(v)
            touched.add(u)
            touched.add(v)
        for joined in reach.values():
            frontier = sorted({v for u, v in edges if u in joined and v not in joined})
            while frontier:
                nxt = set()
                for v in frontier:
                    if v not in joined:
                        joined[v] = r
                        nxt.update(w for w in adj[v] if w not in joined)
                frontier = sorted(nxt)
        snapshots.append(tuple(
            Cloud(u, tuple(m for m, _ in _join_order(j)), tuple(t for _, t in _join_order(j)))
            for u, j in sorted(reach.items())
        ))
    seen: set[int] = set()
    disjoint = True
    for joined in reach.values():
        if seen.intersection(joined):
            disjoint = False
            break
        seen.update(joined)
    return InfluenceCloudSet(snapshots, disjoint)


def _join_order(joined: dict[int, int]):
    return sorted(joined.items(), key=lambda kv: (kv[1], kv[0]))


# ---------------------------------------------------------------------------
# Collision oracles


def no_common_referee_exact(n: int, s: int) -> Fraction:
    """Probability that two independent uniform ``s``-subsets of an ``n``-set are disjoint."""
    if not 1 <= s <= n:
        raise PreconditionError(f"need 1 <= s <= n, got n={n}, s={s}")
    return Fraction(comb(n - s, s), comb(n, s))


class MCEstimate(NamedTuple):
    frequency: float
    stderr: float
    trials: int


def _check_distribution(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or len(p) == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise PreconditionError("distribution must be a non-negative vector summing to 1")
    return p


def collision_mc(distribution, rho: int, trials: int, seed: int,
                 chunk: int = 50_000) -> MCEstimate:
    """Monte-Carlo frequency with which two independent throws of ``rho`` balls
    into bins drawn from ``distribution`` share no bin."""
    p = _check_distribution(distribution)
    if rho < 1 or trials < 1:
        raise PreconditionError("rho and trials must be >= 1")
    rng = np.random.default_rng(seeding.derive_seed(seed, seeding.ORACLE))
    bins = len(p)
    misses = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        a = rng.choice(bins, size=(m, rho), p=p)
        b = rng.choice(bins, size=(m, rho), p=p)
        hit = np.zeros((m, bins), dtype=bool)
        rows = np.arange(m)[:, None]
        hit[rows, a] = True
        misses += int(np.count_nonzero(~hit[rows, b].any(axis=1)))
        done += m
    freq = misses / trials
    return MCEstimate(freq, math.sqrt(freq * (1 - freq) / trials), trials)


def sum_squares(distribution) -> float:
    p = np.asarray(distribution, dtype=float)
    return float(np.dot(p, p))


# ---------------------------------------------------------------------------
# Random-walk election audits


@dataclass
class WalkAudit:
    """Invariant findings for one random-walk election trace."""

    max_rank: int | None
    unique_max: bool
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class _WalkProbe:
    def __init__(self, walk_rounds: int, quorum: int):
        self.walk_rounds = walk_rounds
        self.quorum = quorum
        self.totals: list[dict[int, int]] = []
        self.win_flight: list[dict[int, int]] = []
        self.tallies: list[dict[int, int]] = []

    def __call__(self, rnd, states, sent):
        held: dict[int, int] = defaultdict(int)
        for s in states:
            if s.resident:
                held[s.winner] += s.resident
        wins: dict[int, int] = defaultdict(int)
        for env in sent:
            tok = env.payload
            if tok.kind is Kind.WALK:
                held[tok.rank] += tok.count
            elif tok.kind is Kind.WIN:
                wins[tok.rank] += tok.count
        self.totals.append(dict(held))
        self.win_flight.append(dict(wins))
        self.tallies.append({s.rank: s.win_tally for s in states if s.is_candidate})


def audit_walk_election(topology: Topology, protocol, config: ModelConfig | None = None,
                        seed: int = 0) -> tuple[Trace, WalkAudit]:
    """Run one random-walk election with instrumentation and check walk-count
    conservation, origin in-tree acyclicity, WIN completeness and status totality."""
    params = protocol.params
    T = params.walk_rounds
    probe = _WalkProbe(T, params.quorum)
    trace = run(topology, protocol, config, seed, probe=probe)
    states = trace.states
    cand_ranks = sorted((s.rank for s in states if s.is_candidate), reverse=True)
    max_rank = cand_ranks[0] if cand_ranks else None
    unique = bool(cand_ranks) and (len(cand_ranks) == 1 or cand_ranks[1] < cand_ranks[0])
    audit = WalkAudit(max_rank, unique)
    bad = audit.violations
    rho = params.quorum

    # walk-count conservation over the walk phase (rounds 1..T) and the
    # absorption round T+1 where all walks have landed
    prev: dict[int, int] = {r: rho * cand_ranks.count(r) for r in set(cand_ranks)}
    for rnd, held in enumerate(probe.totals[:T], start=1):
        for rank, before in prev.items():
            now = held.get(rank, 0)
            if now > before:
                bad.append(f"round {rnd}: walk count of rank {rank} grew {before} -> {now}")
            if unique and rank == max_rank and now != rho:
                bad.append(f"round {rnd}: max-rank walk count {now} != {rho}")
        prev = {r: held.get(r, 0) for r in prev}

    if unique:
        leader = next(u for u, s in enumerate(states) if s.is_candidate and s.rank == max_rank)
        # WIN phase: in-flight WIN units plus the leader's tally stay at rho
        for rnd in range(T + 1, trace.rounds + 1):
            flight = probe.win_flight[rnd - 1].get(max_rank, 0)
            tally = probe.tallies[rnd - 1].get(max_rank, 0)
            if flight + tally != rho:
                bad.append(f"round {rnd}: WIN units {flight} + tally {tally} != {rho}")
        if states[leader].win_tally != rho:
            bad.append(f"leader win_tally {states[leader].win_tally} != {rho}")
        if trace.statuses[leader] is not Status.ELECTED:
            bad.append("unique max-rank candidate was not elected")
        bad.extend(_origin_tree_violations(topology, states, max_rank, leader))
        others = trace.leader_ids - {leader}
        if others:
            bad.append(f"extra leaders {sorted(others)} despite a unique max rank")
    late = sum(s.late_wins for s in states)
    if late:
        bad.append(f"{late} WIN units arrived after the last round")
    if any(st is Status.UNDECIDED for st in trace.statuses):
        bad.append("undecided node after decision")
    return trace, audit


def _origin_tree_violations(topology, states, max_rank, leader) -> list[str]:
    bad = []
    for u, s in enumerate(states):
        if s.winner != max_rank:
            continue
        seen = {u}
        v = u
        while states[v].origin is not None:
            parent = topology.neighbor_at(v, states[v].origin)
            if states[parent].winner != max_rank:
                bad.append(f"node {v}: origin points to node {parent} without the max rank")
                break
            if states[parent].first_round >= states[v].first_round:
                bad.append(f"node {v}: origin parent {parent} did not hold the max rank earlier")
                break
            if parent in seen:
                bad.append(f"origin cycle through node {parent}")
                break
            seen.add(parent)
            v = parent
        else:
            if v != leader:
                bad.append(f"origin path from node {u} ends at {v}, not the leader {leader}")
    return bad


def multi_leader_explained(trace: Trace, clouds: InfluenceCloudSet | None = None) -> bool:
    """For a complete-network election with several leaders: True iff every
    pair of leaders either tied on rank or had disjoint first-wave clouds
    (no common referee).  Vacuously True with fewer than two leaders."""
    leaders = sorted(trace.leader_ids)
    if len(leaders) < 2:
        return True
    clouds = clouds or influence_clouds(trace)
    first = {c.initiator: set(c.members) for c in clouds.rounds[0]} if clouds.rounds else {}
    for i, u in enumerate(leaders):
        for v in leaders[i + 1:]:
            if trace.states[u].rank == trace.states[v].rank:
                continue
            if first.get(u, {u}) & first.get(v, {v}):
                return False
    return True
