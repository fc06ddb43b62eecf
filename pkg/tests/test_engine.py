import itertools
import random
from collections import Counter

import pytest

from cbg.embedding import EMPTY, Filtration
from cbg.engine import (
    AwaitingProposal,
    AwaitingResponses,
    ConfigurationError,
    Eligibility,
    GameHandle,
    IllegalProposal,
    IllegalRule,
    ProtocolError,
    Regime,
    Terminated,
    TerminalReason,
    choose_proposer,
    legal_proposals,
    new_game,
)
from cbg.events import Outcome, ProposalEvent, Reply, Response, coalition_of, members
from cbg.simulate import play_random_episode


def brute_legal(n, proposer, rejected, no_repeat):
    out = set()
    for k in range(1, n + 1):
        for combo in itertools.combinations(range(n), k):
            if proposer in combo:
                c = coalition_of(combo)
                if not (no_repeat and c in rejected):
                    out.add(c)
    return out


def rej(round_, proposer, agents):
    c = coalition_of(agents)
    first = min(a for a in agents if a != proposer) if len(agents) > 1 else proposer
    return ProposalEvent(round_, proposer, c, (Response(first, Reply.REJECT),), Outcome.REJECTED)


def game_at(n, regime, proposer, eligibility=Eligibility.ALL_AGENTS):
    g = new_game(n, regime, eligibility, seed=0)
    g.phase = AwaitingProposal(proposer)
    return g


class TestNewGame:
    def test_uniform_initial_proposer(self):
        counts = Counter(new_game(4, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, seed).phase.proposer for seed in range(40_000))
        for a in range(4):
            assert abs(counts[a] / 40_000 - 0.25) < 0.01

    def test_single_agent(self):
        for seed in range(50):
            assert new_game(1, Regime.REPEAT_ALLOWED, Eligibility.EACH_PROPOSES_ONCE, seed).phase == AwaitingProposal(0)

    @pytest.mark.parametrize("n", [0, -1, 17])
    def test_agent_count_bounds(self, n):
        with pytest.raises(ConfigurationError):
            new_game(n, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, 0)

    def test_starts_with_empty_filtration(self):
        assert new_game(3, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, 1).filtration == EMPTY


class TestLegalProposals:
    def test_empty_history(self):
        assert set(legal_proposals(3, 0, EMPTY, Regime.NO_REPEAT)) == {0b001, 0b011, 0b101, 0b111}

    def test_rejected_removed(self):
        f = Filtration((rej(0, 0, {0, 1}),))
        expected = brute_legal(3, 0, {0b011}, True)
        assert set(legal_proposals(3, 0, f, Regime.NO_REPEAT)) == expected == {0b001, 0b101, 0b111}

    def test_repeat_allowed_keeps_rejected(self):
        f = Filtration((rej(0, 0, {0, 1}),))
        assert set(legal_proposals(2, 0, f, Regime.REPEAT_ALLOWED)) == {0b01, 0b11}
        assert legal_proposals(2, 0, f, Regime.LEARNED_AVOIDANCE) == legal_proposals(2, 0, f, Regime.REPEAT_ALLOWED)

    def test_rejection_is_global(self):
        f = Filtration((rej(0, 1, {0, 1}),))
        assert 0b011 not in legal_proposals(3, 0, f, Regime.NO_REPEAT)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_matches_brute_force(self, n):
        rng = random.Random(n)
        for _ in range(50):
            rejected = {rng.randrange(1, 2**n) for _ in range(rng.randrange(0, 2**n))}
            for p in range(n):
                for regime in Regime:
                    got = legal_proposals(n, p, rejected, regime)
                    assert set(got) == brute_legal(n, p, rejected, regime is Regime.NO_REPEAT)
                    assert got == sorted(got)


class TestChooseProposer:
    def test_first_round_uniform(self):
        counts = Counter(
            choose_proposer(4, EMPTY, Eligibility.ALL_AGENTS, Regime.NO_REPEAT, random.Random(s)) for s in range(40_000)
        )
        assert all(abs(counts[a] / 40_000 - 0.25) < 0.01 for a in range(4))

    def test_each_proposes_once(self):
        f = Filtration((rej(0, 0, {0, 1}), rej(1, 1, {1, 2})))
        for s in range(100):
            assert choose_proposer(3, f, Eligibility.EACH_PROPOSES_ONCE, Regime.NO_REPEAT, random.Random(s)) == 2

    def test_agent_without_legal_set_excluded(self):
        # synthetic history: both coalitions containing agent 0 rejected
        f = Filtration((rej(0, 0, {0}), rej(1, 0, {0, 1})))
        per_agent = {a: brute_legal(2, a, {0b01, 0b11}, True) for a in range(2)}
        assert per_agent == {0: set(), 1: {0b10}}
        for s in range(100):
            assert choose_proposer(2, f, Eligibility.ALL_AGENTS, Regime.NO_REPEAT, random.Random(s)) == 1

    def test_exhausted(self):
        f = Filtration((rej(0, 0, {0, 1}), rej(1, 1, {0, 1})))
        assert choose_proposer(2, f, Eligibility.EACH_PROPOSES_ONCE, Regime.NO_REPEAT, random.Random(0)) is None


class TestProposalsAndResponses:
    def test_already_rejected(self):
        g = game_at(3, Regime.NO_REPEAT, 0)
        g.submit_proposal(0b011)
        g.submit_response(Reply.REJECT)
        g.phase = AwaitingProposal(1)
        with pytest.raises(IllegalProposal) as err:
            g.submit_proposal(0b011)
        assert err.value.rule is IllegalRule.ALREADY_REJECTED

    def test_not_containing_proposer(self):
        g = game_at(3, Regime.NO_REPEAT, 0)
        with pytest.raises(IllegalProposal) as err:
            g.submit_proposal(0b110)
        assert err.value.rule is IllegalRule.NOT_CONTAINING_PROPOSER

    @pytest.mark.parametrize("bad,rule", [(0, IllegalRule.EMPTY), (0b1001, IllegalRule.OUT_OF_RANGE)])
    def test_malformed(self, bad, rule):
        with pytest.raises(IllegalProposal) as err:
            game_at(3, Regime.NO_REPEAT, 0).submit_proposal(bad)
        assert err.value.rule is rule

    def test_singleton_auto_accepts(self):
        g = game_at(3, Regime.NO_REPEAT, 0)
        assert g.submit_proposal(0b001) == Terminated(TerminalReason.AGREEMENT, 0b001)
        assert g.filtration.events[0].responses == ()
        assert g.filtration.events[0].outcome is Outcome.ACCEPTED

    def test_responder_queue_ascending(self):
        g = game_at(3, Regime.NO_REPEAT, 0)
        ph = g.submit_proposal(0b111)
        assert isinstance(ph, AwaitingResponses) and ph.queue == (1, 2)
        g = game_at(4, Regime.NO_REPEAT, 2)
        assert g.submit_proposal(0b1111).queue == (0, 1, 3)

    def test_reject_stops_round(self):
        g = game_at(3, Regime.NO_REPEAT, 0)
        g.submit_proposal(0b111)
        ph = g.submit_response(Reply.REJECT)
        assert isinstance(ph, AwaitingProposal)
        (ev,) = g.filtration.events
        assert ev.responses == (Response(1, Reply.REJECT),)
        assert ev.outcome is Outcome.REJECTED

    def test_all_accept(self):
        g = game_at(3, Regime.NO_REPEAT, 0)
        g.submit_proposal(0b111)
        assert isinstance(g.submit_response(Reply.ACCEPT), AwaitingResponses)
        assert g.submit_response(Reply.ACCEPT) == Terminated(TerminalReason.AGREEMENT, 0b111)
        assert len(g.filtration) == 1

    def test_single_responder_accept(self):
        g = game_at(2, Regime.NO_REPEAT, 1)
        g.submit_proposal(0b11)
        assert g.submit_response(Reply.ACCEPT) == Terminated(TerminalReason.AGREEMENT, 0b11)
        assert len(g.filtration) == 1

    def test_wrong_phase(self):
        g = game_at(3, Regime.NO_REPEAT, 0)
        with pytest.raises(ProtocolError):
            g.submit_response(Reply.ACCEPT)
        g.submit_proposal(0b011)
        with pytest.raises(ProtocolError):
            g.submit_proposal(0b011)
        g.submit_response(Reply.ACCEPT)
        with pytest.raises(ProtocolError):
            g.submit_response(Reply.ACCEPT)

    def test_exhausted_under_each_proposes_once(self):
        g = GameHandle(3, Regime.NO_REPEAT, Eligibility.EACH_PROPOSES_ONCE, random.Random(4))
        for _ in range(3):
            p = g.phase.proposer
            g.submit_proposal(0b111 if 0b111 not in g.rejected else (1 << p) | (1 << ((p + 1) % 3)))
            g.submit_response(Reply.REJECT)
        assert g.phase == Terminated(TerminalReason.EXHAUSTED)
        assert len(g.filtration) == 3

    def test_second_proposer_forced(self):
        g = new_game(2, Regime.NO_REPEAT, Eligibility.EACH_PROPOSES_ONCE, 0)
        first = g.phase.proposer
        g.submit_proposal(0b11)
        g.submit_response(Reply.REJECT)
        assert g.phase == AwaitingProposal(1 - first)
        g.submit_proposal(1 << (1 - first))
        assert g.phase == Terminated(TerminalReason.AGREEMENT, 1 << (1 - first))

    def test_round_cap_truncates(self):
        g = GameHandle(2, Regime.REPEAT_ALLOWED, Eligibility.ALL_AGENTS, random.Random(0), max_rounds=2)
        for _ in range(2):
            g.submit_proposal(0b11)
            g.submit_response(Reply.REJECT)
        assert g.phase == Terminated(TerminalReason.TRUNCATED)


class TestStateProjections:
    def test_naive_and_embedded(self):
        g = game_at(3, Regime.NO_REPEAT, 0)
        with pytest.raises(ProtocolError):
            g.naive_state()
        g.submit_proposal(0b011)
        assert g.naive_state().proposer == 0 and g.naive_state().coalition == 0b011
        emb = g.embedded_state()
        assert (emb.coalition, emb.proposer, len(emb.filtration)) == (0b011, 0, 0)
        g.submit_response(Reply.REJECT)
        with pytest.raises(ProtocolError):
            g.naive_state()

    def test_same_events_same_embedded_state(self):
        def play(seed):
            g = new_game(3, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, seed)
            g.phase = AwaitingProposal(1)
            g.submit_proposal(0b110)
            g.submit_response(Reply.REJECT)
            g.phase = AwaitingProposal(0)
            g.submit_proposal(0b011)
            return g.embedded_state()

        assert play(1) == play(99)


class TestProtocolInvariants:
    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    @pytest.mark.parametrize("eligibility", list(Eligibility))
    def test_no_repeat_episode(self, n, eligibility):
        bound = n if eligibility is Eligibility.EACH_PROPOSES_ONCE else 2**n - 1
        for ep in range(400):
            t = play_random_episode(n, Regime.NO_REPEAT, eligibility, 3, ep, 0.3)
            rejected = [e.coalition for e in t.events if e.rejected]
            assert len(rejected) == len(set(rejected))
            assert 1 <= len(t.events) <= bound
            assert all(e.coalition >> e.proposer & 1 for e in t.events)
            assert t.reason in (TerminalReason.AGREEMENT, TerminalReason.EXHAUSTED)
            for e in t.events:
                queried = [r.responder for r in e.responses]
                expected = [a for a in members(e.coalition) if a != e.proposer][: len(queried)]
                assert queried == expected

    def test_p_accept_zero_ends_on_singleton(self):
        # singletons auto-accept, so a no-repeat game cannot run out of proposals
        # with every agent eligible; rejections are capped by the non-singleton count
        for ep in range(500):
            t = play_random_episode(3, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, 11, ep, 0.0)
            assert t.reason is TerminalReason.AGREEMENT
            assert bin(t.events[-1].coalition).count("1") == 1
            assert all(e.rejected for e in t.events[:-1])
            assert len(t.events) <= 2**3 - 1 - 3 + 1

    def test_p_accept_one_ends_in_first_round(self):
        for ep in range(200):
            t = play_random_episode(4, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, 11, ep, 1.0)
            assert len(t.events) == 1 and t.reason is TerminalReason.AGREEMENT

    def test_replay_determinism(self):
        a = [play_random_episode(4, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, 9, i, 0.4) for i in range(200)]
        b = [play_random_episode(4, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, 9, i, 0.4) for i in range(200)]
        assert a == b
        assert [e.packed for t in a for e in t.events] == [e.packed for t in b for e in t.events]
