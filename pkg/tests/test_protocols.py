import math

import pytest

from electsim.engine import Kind, ModelConfig, Protocol, Status, Token, message_count, run
from electsim.errors import PreconditionError, ProtocolInvariantError
from electsim.protocols import (
    CompleteElection,
    NaiveElection,
    Params,
    WalkElection,
    WalkState,
    alg1_round,
    alg2_round,
    explicit_broadcast,
    make_protocol,
)
from electsim.topology import (
    assign_random_ports,
    from_edges,
    make_complete,
    make_cycle,
    make_hypercube,
    make_random_regular,
)


class PinnedCoin:
    """Answers the candidacy coin and the rank draw from a fixed value, then
    defers to the real generator."""

    def __init__(self, rng, rank):
        self._rng = rng
        self._rank = rank
        self._coin_used = self._rank_used = False

    def random(self):
        if not self._coin_used:
            self._coin_used = True
            return 0.0 if self._rank is not None else 1.0
        return self._rng.random()

    def randrange(self, *args):
        if not self._rank_used and self._rank is not None:
            self._rank_used = True
            return self._rank
        return self._rng.randrange(*args)

    def sample(self, population, k):
        return self._rng.sample(population, k)

    def choices(self, population, k):
        return self._rng.choices(population, k)


class Pinned(Protocol):
    """Wraps a protocol so node ``u`` becomes a candidate of rank ``ranks[u]``
    (``None`` means not a candidate).  Pass ``ranks`` as ``run(..., inputs=)``."""

    def __init__(self, inner):
        self.inner = inner
        self.name = inner.name
        self._rank_of = {}

    def check_topology(self, topology):
        self.inner.check_topology(topology)

    def num_rounds(self):
        return self.inner.num_rounds()

    def init_state(self, degree, node_input=None):
        state = self.inner.init_state(degree)
        self._rank_of[id(state)] = node_input
        return state

    def step(self, state, rnd, inbox, rng):
        if rnd == 1:
            rng = PinnedCoin(rng, self._rank_of[id(state)])
        return self.inner.step(state, rnd, inbox, rng)

    def is_pending(self, state):
        return self.inner.is_pending(state)

    def decide(self, state, inbox):
        return self.inner.decide(state, inbox)


def pinned_run(topo, proto, ranks, seed=0, config=None):
    inputs = [ranks.get(u) for u in range(topo.n)]
    return run(topo, Pinned(proto), config, seed, inputs=inputs)


class TestParams:
    def test_sixteen_nodes(self):
        p = Params.for_network(16)
        assert p.candidate_prob == 0.5
        assert p.quorum == 16
        assert p.rank_max == 16**4

    def test_sixteen_nodes_caps_referees(self):
        k16 = make_complete(16)
        trace = pinned_run(k16, CompleteElection.for_topology(k16), {3: 7})
        assert message_count(trace) == 15 + 15
        assert trace.states[3].referees == 15

    def test_one_node(self):
        p = Params.for_network(1)
        assert p.candidate_prob == 1.0 and p.quorum == 1

    def test_validation(self):
        with pytest.raises(PreconditionError):
            Params(4, 0.0, 256, 6)
        with pytest.raises(PreconditionError):
            Params(4, 0.5, 256, 0)
        with pytest.raises(PreconditionError):
            Params.for_network(0)

    def test_walk_rounds_scale(self):
        assert Params.for_network(64, tau=7).walk_rounds == 7
        assert Params.for_network(64, tau=7, tau_multiplier=1.5).walk_rounds == 11
        assert Params.for_network(64, tau=7, tau_multiplier=0.01).walk_rounds == 1

    @pytest.mark.parametrize("n", [64, 256, 1024, 4096])
    def test_zero_candidate_probability_is_tiny(self, n):
        p = Params.for_network(n)
        assert (1 - p.candidate_prob) ** n <= n**-2


class TestCompleteElection:
    def test_single_candidate_wins(self):
        k = assign_random_ports(make_complete(32), 3)
        for seed in range(5):
            trace = pinned_run(k, CompleteElection.for_topology(k), {5: 1}, seed)
            assert trace.leader_ids == {5}
            st = trace.states[5]
            assert st.win_tally == st.referees == min(Params.for_network(32).quorum, 31)

    def test_no_candidates_no_leader(self):
        k = make_complete(32)
        trace = pinned_run(k, CompleteElection.for_topology(k), {})
        assert trace.leader_ids == set() and message_count(trace) == 0
        assert set(trace.statuses) == {Status.NON_ELECTED}

    def test_higher_rank_wins(self):
        k = assign_random_ports(make_complete(16), 8)
        trace = pinned_run(k, CompleteElection.for_topology(k), {2: 9, 11: 5})
        assert trace.leader_ids == {2}
        assert trace.states[2].win_tally == 15
        assert trace.states[11].win_tally == 1

    def test_rank_tie_never_double_notifies(self):
        k = assign_random_ports(make_complete(16), 1)
        for seed in range(10):
            trace = pinned_run(k, CompleteElection.for_topology(k), {0: 4, 1: 4}, seed)
            assert len(trace.leader_ids) <= 1
            notifies = [e for e in trace.envelopes if e.payload.kind is Kind.NOTIFY]
            assert len({e.src for e in notifies}) == len(notifies)

    def test_message_bound(self):
        k = make_complete(256)
        proto = CompleteElection.for_topology(k)
        for seed in range(20):
            trace = run(k, proto, seed=seed)
            cands = [s for s in trace.states if s.is_candidate]
            s = min(proto.params.quorum, 255)
            assert message_count(trace) <= 2 * len(cands) * s

    def test_non_candidate_decides_immediately(self):
        state = CompleteElection.for_topology(make_complete(4)).init_state(3)
        params = Params.for_network(4)
        state, out = alg1_round(state, 1, [], params, PinnedCoin(None, None))
        assert out == [] and state.status is Status.NON_ELECTED

    def test_rejects_other_topologies(self):
        c = make_cycle(6)
        with pytest.raises(PreconditionError):
            run(c, CompleteElection(Params.for_network(6)))
        with pytest.raises(PreconditionError):
            make_protocol("alg1", make_complete(8)).check_topology(make_complete(9))


class TestWalkElection:
    @pytest.mark.parametrize(
        "topo",
        [make_hypercube(4), make_cycle(9), make_random_regular(20, 3, 2), make_complete(12)],
        ids=["Q4", "C9", "RR20", "K12"],
    )
    def test_single_candidate_wins(self, topo):
        topo = assign_random_ports(topo, 1)
        proto = WalkElection.for_topology(topo)
        for seed in range(3):
            trace = pinned_run(topo, proto, {0: 77}, seed)
            assert trace.leader_ids == {0}
            assert trace.states[0].win_tally == proto.params.quorum
            assert sum(s.walks_dropped for s in trace.states) == 0
            assert sum(s.late_wins for s in trace.states) == 0

    def test_discard_rule(self):
        k3 = make_complete(3)
        proto = WalkElection.for_topology(k3)
        for seed in range(20):
            trace = pinned_run(k3, proto, {0: 9, 1: 5}, seed)
            assert trace.leader_ids == {0}
            assert trace.states[1].win_tally < proto.params.quorum
            assert trace.states[1].winner == 9

    def test_lower_walks_dropped_at_meeting_node(self):
        state = WalkState(degree=2)
        params = Params.for_network(8, tau=3)
        inbox = [(1, Token(Kind.WALK, 5, 4)), (2, Token(Kind.WALK, 9, 2))]
        state, _ = alg2_round(state, 2, inbox, params, PinnedCoin(_Never(), None))
        assert state.winner == 9 and state.origin == 2
        assert state.walks_dropped == 4
        inbox = [(1, Token(Kind.WALK, 9, 3))]
        state.resident = 0
        state, _ = alg2_round(state, 3, inbox, params, _Never())
        assert state.origin == 2

    def test_complete_graph_one_step(self):
        k = assign_random_ports(make_complete(64), 2)
        proto = WalkElection.for_topology(k)
        assert proto.params.tau == 1 and proto.num_rounds() == 3
        wins = sum(len(run(k, proto, seed=s).leader_ids) == 1 for s in range(50))
        assert wins >= 45

    def test_lazy_walks_sometimes_stay(self):
        q3 = make_hypercube(3)
        proto = WalkElection.for_topology(q3)
        assert proto.params.lazy
        trace = pinned_run(q3, proto, {0: 3}, 0)
        first = sum(e.payload.count for e in trace.envelopes if e.round == 1)
        assert 0 < first < proto.params.quorum

    def test_win_for_unknown_rank_is_loud(self):
        state = WalkState(degree=2, winner=5, origin=1)
        params = Params.for_network(8, tau=1)
        with pytest.raises(ProtocolInvariantError):
            alg2_round(state, 3, [(1, Token(Kind.WIN, 6, 1))], params, None)

    def test_bipartite_needs_lazy(self):
        from dataclasses import replace

        c4 = make_cycle(4)
        proto = WalkElection(replace(Params.for_network(4, tau=2), lazy=False))
        with pytest.raises(PreconditionError):
            run(c4, proto)


class _Never:
    def choices(self, population, k):
        return [0] * k

    def random(self):
        return 1.0


class TestNaive:
    def test_single_node_elects(self):
        one = from_edges(1, [])
        for seed in range(10):
            assert run(one, NaiveElection.for_topology(one), seed=seed).leader_ids == {0}

    def test_no_messages(self):
        k = make_complete(32)
        for seed in range(10):
            assert message_count(run(k, NaiveElection.for_topology(k), seed=seed)) == 0


def first_seed_with_unique_leader(topo, proto):
    for seed in range(1000):
        trace = run(topo, proto, seed=seed)
        if len(trace.leader_ids) == 1:
            return trace
    raise AssertionError("no unique leader found")


class TestBroadcast:
    def test_complete(self):
        k = assign_random_ports(make_complete(64), 5)
        trace = first_seed_with_unique_leader(k, CompleteElection.for_topology(k))
        result = explicit_broadcast(trace, k)
        assert result.messages == 63 and result.rounds == 1
        assert result.all_informed
        (leader,) = trace.leader_ids
        assert result.identity == trace.states[leader].rank

    def test_cycle(self):
        c5 = assign_random_ports(make_cycle(5), 2)
        trace = first_seed_with_unique_leader(c5, NaiveElection.for_topology(c5))
        result = explicit_broadcast(trace, c5)
        assert result.messages <= 10 and result.rounds == math.ceil(5 / 2)
        assert result.all_informed

    @pytest.mark.parametrize("topo", [make_hypercube(5), make_random_regular(40, 4, 1)])
    def test_flood_cost(self, topo):
        trace = first_seed_with_unique_leader(topo, NaiveElection.for_topology(topo))
        result = explicit_broadcast(trace, topo)
        assert result.all_informed
        assert result.messages <= 2 * topo.num_edges

    def test_single_node(self):
        one = from_edges(1, [])
        trace = run(one, NaiveElection.for_topology(one))
        assert explicit_broadcast(trace, one).messages == 0

    def test_needs_exactly_one_leader(self):
        k = make_complete(8)
        none = pinned_run(k, CompleteElection.for_topology(k), {})
        with pytest.raises(PreconditionError):
            explicit_broadcast(none, k)
        for seed in range(200):
            trace = run(k, NaiveElection.for_topology(k), seed=seed)
            if len(trace.leader_ids) > 1:
                with pytest.raises(PreconditionError):
                    explicit_broadcast(trace, k)
                break
        else:
            pytest.fail("no multi-leader run found")


def test_make_protocol_names():
    k = make_complete(8)
    assert make_protocol("alg1", k).name == "alg1"
    assert make_protocol("alg2", k).name == "alg2"
    assert make_protocol("naive", k).name == "naive"
    with pytest.raises(PreconditionError):
        make_protocol("paxos", k)


def test_congest_holds_for_bundled_protocols():
    from electsim.engine import check_congest

    for topo, name in [(make_complete(128), "alg1"), (make_hypercube(6), "alg2"),
                       (make_random_regular(64, 4, 9), "alg2")]:
        proto = make_protocol(name, topo)
        for seed in range(3):
            trace = run(topo, proto, ModelConfig(model="LOCAL"), seed)
            assert check_congest(trace, topo.n, 8)
