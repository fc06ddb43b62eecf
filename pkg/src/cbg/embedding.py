"""Filtration (append-only event history) and canonical state keys.

A filtration here is the generating sequence of proposal events; two
filtrations are equal iff their event sequences are. States reduce to
``bytes`` keys with a fixed, versioned layout::

    version:u8  n:u8  kind:u8  proposer:u8  coalition:u16  [event:8 bytes]*

where each event is ``proposer:u8 coalition:u16 responders:u16 accepts:u16
outcome:u8``. Naive keys never carry events.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

from .events import EVENT_WIDTH, Coalition, ProposalEvent, unpack_event

KEY_VERSION = 1
_KIND_NAIVE = ord("N")
_KIND_EMBEDDED = ord("E")
_HEAD = struct.Struct(">BBBBH")

StateKey = bytes


class SequencingError(ValueError):
    """An event was appended out of round order."""


@dataclass(frozen=True)
class Filtration:
    events: tuple[ProposalEvent, ...] = ()

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def is_prefix_of(self, other: Filtration) -> bool:
        return other.events[: len(self.events)] == self.events

    def packed(self) -> bytes:
        return b"".join(e.packed for e in self.events)


EMPTY = Filtration()


def append_event(f: Filtration, e: ProposalEvent) -> Filtration:
    if e.round != len(f.events):
        raise SequencingError(f"event round {e.round} does not follow a filtration of length {len(f.events)}")
    return Filtration(f.events + (e,))


def rejected_coalitions(f: Filtration | Iterable[ProposalEvent]) -> set[Coalition]:
    return {e.coalition for e in f if e.rejected}


@dataclass(frozen=True)
class NaiveState:
    proposer: int
    coalition: Coalition


@dataclass(frozen=True)
class EmbeddedState:
    """Current proposal plus the completed rounds that preceded it."""

    coalition: Coalition
    proposer: int
    filtration: Filtration


State = Union[NaiveState, EmbeddedState]


def naive_key(n: int, proposer: int, coalition: Coalition) -> StateKey:
    return _HEAD.pack(KEY_VERSION, n, _KIND_NAIVE, proposer, coalition)


def embedded_key(n: int, proposer: int, coalition: Coalition, history: bytes) -> StateKey:
    """``history`` is the concatenation of packed events (see ``Filtration.packed``)."""
    return _HEAD.pack(KEY_VERSION, n, _KIND_EMBEDDED, proposer, coalition) + history


def canonical_key(state: State, n: int) -> StateKey:
    if isinstance(state, NaiveState):
        return naive_key(n, state.proposer, state.coalition)
    return embedded_key(n, state.proposer, state.coalition, state.filtration.packed())


def decode_key(key: StateKey) -> tuple[int, State]:
    version, n, kind, proposer, coalition = _HEAD.unpack_from(key)
    if version != KEY_VERSION:
        raise ValueError(f"unsupported key version {version}")
    body = key[_HEAD.size :]
    if kind == _KIND_NAIVE:
        if body:
            raise ValueError("naive key carries trailing bytes")
        return n, NaiveState(proposer, coalition)
    if kind != _KIND_EMBEDDED or len(body) % EVENT_WIDTH:
        raise ValueError("malformed state key")
    events = tuple(
        unpack_event(i, body[i * EVENT_WIDTH : (i + 1) * EVENT_WIDTH])
        for i in range(len(body) // EVENT_WIDTH)
    )
    return n, EmbeddedState(coalition, proposer, Filtration(events))


class HistoryClassifier(Enum):
    FULL_HISTORY = "full"
    REJECTED_SET = "rejected-set"
    PREVIOUS_STATE = "prev-state"


NO_PREVIOUS_STATE = b"P-"


def history_class_key(f: Filtration | tuple[ProposalEvent, ...], classifier: HistoryClassifier) -> bytes:
    """Conditioning class of a history for the Markov audit."""
    events = f.events if isinstance(f, Filtration) else f
    if classifier is HistoryClassifier.FULL_HISTORY:
        return b"F" + b"".join(e.packed for e in events)
    if classifier is HistoryClassifier.REJECTED_SET:
        masks = sorted({e.coalition for e in events if e.rejected})
        return b"R" + b"".join(struct.pack(">H", m) for m in masks)
    if not events:
        return NO_PREVIOUS_STATE
    last = events[-1]
    return b"P" + struct.pack(">BH", last.proposer, last.coalition)


def observation_key(
    agent: int,
    n: int,
    history: bytes,
    pending: tuple[int, Coalition] | None = None,
    replies: int = 0,
) -> StateKey:
    """Key an agent's decision point: who is deciding, the open proposal (if
    responding) with the number of accepts already given, and the filtration."""
    if pending is None:
        head = struct.pack(">BBBB", KEY_VERSION, n, ord("p"), agent)
    else:
        head = struct.pack(">BBBBBHB", KEY_VERSION, n, ord("r"), agent, pending[0], pending[1], replies)
    return head + history
