"""Coalitional bargaining games: simulation, filtration embedding, Markov audit."""

from .audit import StateMapper, collect, independence_test, negative_control, verify_embedding
from .embedding import Filtration, HistoryClassifier, append_event, canonical_key, history_class_key, rejected_coalitions
from .engine import Eligibility, GameHandle, Regime, TerminalReason, Trajectory, legal_proposals, new_game
from .events import Outcome, ProposalEvent, Reply, coalition_of

__all__ = [
    "Eligibility",
    "Filtration",
    "GameHandle",
    "HistoryClassifier",
    "Outcome",
    "ProposalEvent",
    "Regime",
    "Reply",
    "StateMapper",
    "TerminalReason",
    "Trajectory",
    "append_event",
    "canonical_key",
    "coalition_of",
    "collect",
    "history_class_key",
    "independence_test",
    "legal_proposals",
    "negative_control",
    "new_game",
    "rejected_coalitions",
    "verify_embedding",
]
