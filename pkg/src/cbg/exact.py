"""Exhaustive expansion of small games under memoryless random policies.

Walks every history with exact rational probabilities: uniform proposer
over eligible agents, uniform coalition over that proposer's legal set,
i.i.d. accepts with probability ``p_accept``. Legality is re-derived here
from the protocol rules rather than imported from the engine so that the
two can check each other.

Repeat-allowed games are infinite; they need ``max_rounds``, and the mass
still in play at the cap is reported as truncated leaves.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

from .audit import ABSORBING
from .embedding import HistoryClassifier, embedded_key, history_class_key, naive_key
from .engine import Eligibility, Regime, TerminalReason
from .events import Outcome, ProposalEvent, Reply, Response

MAX_EXACT_AGENTS = 3


class EnumerationError(ValueError):
    pass


def _subsets_with(n: int, agent: int) -> list[int]:
    return [m for m in range(1, 2**n) if (m >> agent) & 1]


@dataclass
class _Cond:
    weight: Fraction = Fraction(0)
    mass: dict = field(default_factory=lambda: defaultdict(Fraction))

    def distribution(self) -> dict[bytes, Fraction]:
        return {k: v / self.weight for k, v in self.mass.items()}


@dataclass
class ExactModel:
    n: int
    regime: Regime
    eligibility: Eligibility
    p_accept: Fraction
    max_rounds: int | None
    leaves: list[tuple[tuple[ProposalEvent, ...], TerminalReason, Fraction]] = field(default_factory=list)
    round0: dict[tuple[int, int], Fraction] = field(default_factory=lambda: defaultdict(Fraction))
    event_mass: dict[tuple[int, int, int, str], Fraction] = field(default_factory=lambda: defaultdict(Fraction))
    naive: dict[HistoryClassifier, dict[tuple[bytes, bytes], _Cond]] = field(
        default_factory=lambda: {c: defaultdict(_Cond) for c in HistoryClassifier}
    )
    embedded: dict[bytes, _Cond] = field(default_factory=lambda: defaultdict(_Cond))

    @property
    def total_probability(self) -> Fraction:
        return sum((p for *_, p in self.leaves), Fraction(0))

    def naive_conditional(self, classifier: HistoryClassifier, state: bytes, cls: bytes) -> dict[bytes, Fraction]:
        return self.naive[classifier][(state, cls)].distribution()

    def event_distribution(self) -> dict[tuple[int, int, int, str], Fraction]:
        """Expected event counts per episode, normalised to sum to one."""
        total = sum(self.event_mass.values())
        return {k: v / total for k, v in self.event_mass.items()}

    def to_dict(self) -> dict:
        def dist(d):
            return {k.hex(): float(v) for k, v in sorted(d.items())}

        return {
            "n": self.n,
            "regime": self.regime.value,
            "eligibility": self.eligibility.value,
            "p_accept": str(self.p_accept),
            "max_rounds": self.max_rounds,
            "total_probability": float(self.total_probability),
            "leaves": len(self.leaves),
            "outcomes": {
                r.value: float(sum((p for _, rr, p in self.leaves if rr is r), Fraction(0))) for r in TerminalReason
            },
            "round0": {f"{p}:{c:x}": float(v) for (p, c), v in sorted(self.round0.items())},
            "naive": {
                clf.value: [
                    {"state": s.hex(), "class": c.hex(), "weight": float(cond.weight), "next": dist(cond.distribution())}
                    for (s, c), cond in sorted(table.items())
                ]
                for clf, table in self.naive.items()
            },
            "embedded": [
                {"state": s.hex(), "weight": float(cond.weight), "next": dist(cond.distribution())}
                for s, cond in sorted(self.embedded.items())
            ],
        }


def enumerate_game(
    n: int,
    regime: Regime,
    p_accept: float | Fraction | str,
    eligibility: Eligibility = Eligibility.ALL_AGENTS,
    max_rounds: int | None = None,
) -> ExactModel:
    if not 1 <= n <= MAX_EXACT_AGENTS:
        raise EnumerationError(f"exhaustive enumeration is limited to n <= {MAX_EXACT_AGENTS}, got {n}")
    pa = p_accept if isinstance(p_accept, Fraction) else Fraction(str(p_accept))
    if not 0 <= pa <= 1:
        raise EnumerationError("p_accept must lie in [0, 1]")
    no_repeat = regime is Regime.NO_REPEAT
    if not no_repeat and max_rounds is None and pa < 1:
        raise EnumerationError("repeat-allowed games are infinite; pass max_rounds")
    model = ExactModel(n, regime, eligibility, pa, max_rounds)

    def options(events: tuple[ProposalEvent, ...]) -> list[tuple[int, int, Fraction]]:
        """(proposer, coalition, probability) for the next round."""
        rejected = {e.coalition for e in events if e.outcome is Outcome.REJECTED}
        done = {e.proposer for e in events}
        out = []
        pool = []
        for a in range(n):
            if eligibility is Eligibility.EACH_PROPOSES_ONCE and a in done:
                continue
            legal = [c for c in _subsets_with(n, a) if not (no_repeat and c in rejected)]
            if legal:
                pool.append((a, legal))
        for a, legal in pool:
            for c in legal:
                out.append((a, c, Fraction(1, len(pool) * len(legal))))
        return out

    def visit(events, history: bytes, p: int, c: int, reach: Fraction) -> None:
        t = len(events)
        if t == 0:
            model.round0[(p, c)] += reach
        s_naive = naive_key(n, p, c)
        s_emb = embedded_key(n, p, c, history)
        conds = [model.naive[clf][(s_naive, history_class_key(events, clf))] for clf in HistoryClassifier]
        emb = model.embedded[s_emb]
        for cond in conds:
            cond.weight += reach
        emb.weight += reach

        responders = [a for a in range(n) if (c >> a) & 1 and a != p]
        # every accept pattern of length k: accepts then a reject at position k, or all accept
        accept_all = pa ** len(responders)
        branches = []
        for k in range(len(responders)):
            prob = pa**k * (1 - pa)
            if prob:
                replies = tuple(Response(a, Reply.ACCEPT) for a in responders[:k]) + (
                    Response(responders[k], Reply.REJECT),
                )
                branches.append((replies, prob))
        if accept_all:
            ev = ProposalEvent(t, p, c, tuple(Response(a, Reply.ACCEPT) for a in responders), Outcome.ACCEPTED)
            model.event_mass[(t, p, c, "accepted")] += reach * accept_all
            model.leaves.append((events + (ev,), TerminalReason.AGREEMENT, reach * accept_all))
            for cond in conds:
                cond.mass[ABSORBING] += reach * accept_all
            emb.mass[ABSORBING] += reach * accept_all
        for replies, prob in branches:
            ev = ProposalEvent(t, p, c, replies, Outcome.REJECTED)
            model.event_mass[(t, p, c, "rejected")] += reach * prob
            nxt_events = events + (ev,)
            nxt_history = history + ev.packed
            mass = reach * prob
            if max_rounds is not None and len(nxt_events) >= max_rounds:
                model.leaves.append((nxt_events, TerminalReason.TRUNCATED, mass))
                for cond in conds:
                    cond.mass[ABSORBING] += mass
                emb.mass[ABSORBING] += mass
                continue
            nxt = options(nxt_events)
            if not nxt:
                model.leaves.append((nxt_events, TerminalReason.EXHAUSTED, mass))
                for cond in conds:
                    cond.mass[ABSORBING] += mass
                emb.mass[ABSORBING] += mass
                continue
            for p2, c2, q in nxt:
                for cond in conds:
                    cond.mass[naive_key(n, p2, c2)] += mass * q
                emb.mass[embedded_key(n, p2, c2, nxt_history)] += mass * q
                visit(nxt_events, nxt_history, p2, c2, mass * q)

    for p, c, q in options(()):
        visit((), b"", p, c, q)
    return model
