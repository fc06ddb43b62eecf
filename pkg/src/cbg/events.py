"""Coalition bitmasks and the per-round proposal record."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

MAX_AGENTS = 16

Coalition = int  # bitmask over agent indices; bit i set <=> agent i is a member


class Reply(Enum):
    ACCEPT = "A"
    REJECT = "R"


class Outcome(Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


def coalition_of(agents: Iterable[int]) -> Coalition:
    mask = 0
    for a in agents:
        mask |= 1 << a
    return mask


def members(mask: Coalition) -> list[int]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def fmt_coalition(mask: Coalition) -> str:
    return "{" + ",".join(str(a) for a in members(mask)) + "}"


@dataclass(frozen=True)
class Response:
    responder: int
    reply: Reply


@dataclass(frozen=True)
class ProposalEvent:
    """One completed bargaining round.

    ``responses`` follow ascending agent id over the coalition minus the
    proposer and stop at the first rejection, so the outcome is ``ACCEPTED``
    exactly when every recorded reply is an accept and nobody was skipped.
    """

    round: int
    proposer: int
    coalition: Coalition
    responses: tuple[Response, ...]
    outcome: Outcome
    _packed: bytes = field(default=b"", init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        responders = accepts = 0
        for r in self.responses:
            responders |= 1 << r.responder
            if r.reply is Reply.ACCEPT:
                accepts |= 1 << r.responder
        packed = struct.pack(
            ">BHHHB",
            self.proposer,
            self.coalition,
            responders,
            accepts,
            0 if self.outcome is Outcome.ACCEPTED else 1,
        )
        object.__setattr__(self, "_packed", packed)

    @property
    def packed(self) -> bytes:
        """Fixed 8-byte layout: proposer, coalition, responder mask, accept mask, outcome."""
        return self._packed

    @property
    def rejected(self) -> bool:
        return self.outcome is Outcome.REJECTED


EVENT_WIDTH = 8


def unpack_event(round_: int, raw: bytes) -> ProposalEvent:
    proposer, coalition, responders, accepts, outcome = struct.unpack(">BHHHB", raw)
    responses = tuple(
        Response(a, Reply.ACCEPT if accepts >> a & 1 else Reply.REJECT)
        for a in members(responders)
    )
    return ProposalEvent(
        round_,
        proposer,
        coalition,
        responses,
        Outcome.ACCEPTED if outcome == 0 else Outcome.REJECTED,
    )
