"""Coalitional bargaining protocol as a deterministic state machine.

As a stochastic game ``<N, S, A, T, R, gamma>``: ``N`` is ``range(n)``;
a state is the open proposal (naive) or the open proposal plus the
filtration (embedded); actions are coalitions for the proposer and
accept/reject for responders; ``T`` is implemented by ``GameHandle``;
rewards live in :mod:`cbg.agents`.

A round: an eligible proposer is drawn uniformly, names a coalition that
contains itself, and the other members reply in ascending id order. The
first rejection ends the round; unanimous acceptance ends the game.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Union

from .embedding import (
    EMPTY,
    EmbeddedState,
    Filtration,
    NaiveState,
    append_event,
    rejected_coalitions,
)
from .events import MAX_AGENTS, Coalition, Outcome, ProposalEvent, Reply, Response, fmt_coalition, members


class Regime(Enum):
    REPEAT_ALLOWED = "repeat"
    LEARNED_AVOIDANCE = "learned"
    NO_REPEAT = "no-repeat"


class Eligibility(Enum):
    ALL_AGENTS = "all"
    EACH_PROPOSES_ONCE = "once"


class TerminalReason(Enum):
    AGREEMENT = "agreement"
    EXHAUSTED = "exhausted"
    # only reachable when a round cap is configured (learning runs)
    TRUNCATED = "truncated"


class ConfigurationError(ValueError):
    pass


class ProtocolError(RuntimeError):
    """An operation was called in a phase that does not permit it."""


class IllegalRule(Enum):
    EMPTY = "empty-coalition"
    OUT_OF_RANGE = "agent-out-of-range"
    NOT_CONTAINING_PROPOSER = "not-containing-proposer"
    ALREADY_REJECTED = "already-rejected"


class IllegalProposal(ValueError):
    def __init__(self, rule: IllegalRule, proposer: int, coalition: Coalition):
        super().__init__(f"{rule.value}: agent {proposer} proposed {fmt_coalition(coalition)}")
        self.rule = rule


@dataclass(frozen=True)
class AwaitingProposal:
    proposer: int


@dataclass(frozen=True)
class AwaitingResponses:
    state: NaiveState
    replies: tuple[Response, ...]
    queue: tuple[int, ...]  # responders still to reply, in order


@dataclass(frozen=True)
class Terminated:
    reason: TerminalReason
    coalition: Coalition | None = None


GamePhase = Union[AwaitingProposal, AwaitingResponses, Terminated]


@dataclass(frozen=True)
class Trajectory:
    """A finished episode together with the configuration that produced it."""

    episode: int
    n: int
    regime: Regime
    eligibility: Eligibility
    events: tuple[ProposalEvent, ...]
    reason: TerminalReason
    policy: str = "unknown"

    @property
    def config(self) -> tuple:
        return (self.n, self.regime, self.eligibility, self.policy)


@lru_cache(maxsize=None)
def coalitions_containing(n: int, agent: int) -> tuple[Coalition, ...]:
    bit = 1 << agent
    return tuple(m for m in range(1, 1 << n) if m & bit)


def legal_proposals(
    n: int,
    proposer: int,
    history: Filtration | set[Coalition] | frozenset[Coalition],
    regime: Regime,
) -> list[Coalition]:
    """Coalitions ``proposer`` may name, ascending by bitmask.

    ``history`` is the filtration or, as a shortcut, its set of rejected
    coalitions. Under ``NO_REPEAT`` a rejection bans the coalition for every
    proposer, not just the one who named it.
    """
    candidates = coalitions_containing(n, proposer)
    if regime is not Regime.NO_REPEAT:
        return list(candidates)
    rejected = history if isinstance(history, (set, frozenset)) else rejected_coalitions(history)
    if not rejected:
        return list(candidates)
    return [c for c in candidates if c not in rejected]


def _has_legal(n: int, agent: int, rejected: set[Coalition], regime: Regime) -> bool:
    if regime is not Regime.NO_REPEAT or not rejected:
        return True
    return any(c not in rejected for c in coalitions_containing(n, agent))


def eligible_proposers(
    n: int,
    filtration: Filtration,
    eligibility: Eligibility,
    regime: Regime,
    *,
    rejected: set[Coalition] | None = None,
    proposed: set[int] | None = None,
) -> list[int]:
    if rejected is None:
        rejected = rejected_coalitions(filtration)
    if eligibility is Eligibility.EACH_PROPOSES_ONCE:
        if proposed is None:
            proposed = {e.proposer for e in filtration}
        pool = [a for a in range(n) if a not in proposed]
    else:
        pool = list(range(n))
    return [a for a in pool if _has_legal(n, a, rejected, regime)]


def choose_proposer(
    n: int,
    filtration: Filtration,
    eligibility: Eligibility,
    regime: Regime,
    rng: random.Random,
    **known,
) -> int | None:
    """Uniform draw over eligible agents with a nonempty legal set; ``None`` if exhausted."""
    pool = eligible_proposers(n, filtration, eligibility, regime, **known)
    if not pool:
        return None
    return pool[rng.randrange(len(pool))] if len(pool) > 1 else pool[0]


class GameHandle:
    """One episode. Not safe for concurrent mutation."""

    def __init__(
        self,
        n: int,
        regime: Regime,
        eligibility: Eligibility,
        rng: random.Random,
        max_rounds: int | None = None,
    ):
        if not 1 <= n <= MAX_AGENTS:
            raise ConfigurationError(f"agent count must be in [1, {MAX_AGENTS}], got {n}")
        if max_rounds is not None and max_rounds < 1:
            raise ConfigurationError("max_rounds must be positive")
        self.n = n
        self.regime = regime
        self.eligibility = eligibility
        self.rng = rng
        self.max_rounds = max_rounds
        self.filtration: Filtration = EMPTY
        self.history = b""  # packed filtration, kept in step for fast keys
        self._rejected: set[Coalition] = set()
        self._proposed: set[int] = set()
        first = choose_proposer(n, EMPTY, eligibility, regime, rng)
        assert first is not None
        self.phase: GamePhase = AwaitingProposal(first)

    @property
    def round(self) -> int:
        return len(self.filtration)

    @property
    def done(self) -> bool:
        return isinstance(self.phase, Terminated)

    @property
    def rejected(self) -> frozenset[Coalition]:
        return frozenset(self._rejected)

    def legal_proposals(self) -> list[Coalition]:
        phase = self.phase
        if not isinstance(phase, AwaitingProposal):
            raise ProtocolError(f"no proposer is pending in phase {type(phase).__name__}")
        return legal_proposals(self.n, phase.proposer, self._rejected, self.regime)

    def submit_proposal(self, coalition: Coalition) -> GamePhase:
        phase = self.phase
        if not isinstance(phase, AwaitingProposal):
            raise ProtocolError(f"cannot propose in phase {type(phase).__name__}")
        proposer = phase.proposer
        if coalition <= 0:
            raise IllegalProposal(IllegalRule.EMPTY, proposer, coalition)
        if coalition >> self.n:
            raise IllegalProposal(IllegalRule.OUT_OF_RANGE, proposer, coalition)
        if not coalition >> proposer & 1:
            raise IllegalProposal(IllegalRule.NOT_CONTAINING_PROPOSER, proposer, coalition)
        if self.regime is Regime.NO_REPEAT and coalition in self._rejected:
            raise IllegalProposal(IllegalRule.ALREADY_REJECTED, proposer, coalition)
        self._proposed.add(proposer)
        queue = tuple(a for a in members(coalition) if a != proposer)
        state = NaiveState(proposer, coalition)
        if not queue:
            self._close(state, (), Outcome.ACCEPTED)
        else:
            self.phase = AwaitingResponses(state, (), queue)
        return self.phase

    def submit_response(self, reply: Reply) -> GamePhase:
        phase = self.phase
        if not isinstance(phase, AwaitingResponses):
            raise ProtocolError(f"cannot respond in phase {type(phase).__name__}")
        replies = phase.replies + (Response(phase.queue[0], reply),)
        if reply is Reply.REJECT:
            self._close(phase.state, replies, Outcome.REJECTED)
        elif len(phase.queue) == 1:
            self._close(phase.state, replies, Outcome.ACCEPTED)
        else:
            self.phase = AwaitingResponses(phase.state, replies, phase.queue[1:])
        return self.phase

    def _close(self, state: NaiveState, replies: tuple[Response, ...], outcome: Outcome) -> None:
        event = ProposalEvent(self.round, state.proposer, state.coalition, replies, outcome)
        self.filtration = append_event(self.filtration, event)
        self.history += event.packed
        if outcome is Outcome.ACCEPTED:
            self.phase = Terminated(TerminalReason.AGREEMENT, state.coalition)
            return
        self._rejected.add(state.coalition)
        if self.max_rounds is not None and self.round >= self.max_rounds:
            self.phase = Terminated(TerminalReason.TRUNCATED)
            return
        nxt = choose_proposer(
            self.n,
            self.filtration,
            self.eligibility,
            self.regime,
            self.rng,
            rejected=self._rejected,
            proposed=self._proposed,
        )
        self.phase = Terminated(TerminalReason.EXHAUSTED) if nxt is None else AwaitingProposal(nxt)

    def _current(self) -> tuple[NaiveState, Filtration]:
        phase = self.phase
        if isinstance(phase, AwaitingResponses):
            return phase.state, self.filtration
        if isinstance(phase, Terminated) and self.filtration.events:
            last = self.filtration.events[-1]
            return NaiveState(last.proposer, last.coalition), Filtration(self.filtration.events[:-1])
        raise ProtocolError("no proposal has been made this round")

    def trajectory(self, episode: int, policy: str = "unknown") -> Trajectory:
        phase = self.phase
        if not isinstance(phase, Terminated):
            raise ProtocolError("episode has not terminated")
        return Trajectory(
            episode, self.n, self.regime, self.eligibility, self.filtration.events, phase.reason, policy
        )

    def naive_state(self) -> NaiveState:
        return self._current()[0]

    def embedded_state(self) -> EmbeddedState:
        state, prior = self._current()
        return EmbeddedState(state.coalition, state.proposer, prior)


def new_game(
    n: int,
    regime: Regime,
    eligibility: Eligibility,
    seed: int,
    max_rounds: int | None = None,
) -> GameHandle:
    return GameHandle(n, regime, eligibility, random.Random(seed), max_rounds)
