"""Episode runner for memoryless random policies, and the trajectory log.

The log is JSON lines: one header object describing the run, then one
record per proposal event in episode order with a fixed field order::

    {"episode":0,"round":0,"proposer":1,"coalition":"3","replies":[[0,"R"]],
     "outcome":"rejected","terminal":false,"reason":null}

``coalition`` is the member bitmask in hex. The last record of each
episode carries ``terminal: true`` and the terminal reason.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from .agents import RandomProposer, RandomResponder, random_policy_fingerprint
from .engine import (
    AwaitingProposal,
    Eligibility,
    GameHandle,
    Regime,
    TerminalReason,
    Trajectory,
)
from .events import Outcome, ProposalEvent, Reply, Response
from .rng import ENGINE_STREAM, POLICY_STREAM, stream

LOG_FORMAT = "cbg-trajectory/1"


class LogFormatError(ValueError):
    pass


def play_random_episode(
    n: int,
    regime: Regime,
    eligibility: Eligibility,
    seed: int,
    episode: int,
    p_accept: float,
    max_rounds: int | None = None,
) -> Trajectory:
    proposer = RandomProposer()
    responder = RandomResponder(p_accept)
    prng = stream(seed, episode, POLICY_STREAM)
    game = GameHandle(n, regime, eligibility, stream(seed, episode, ENGINE_STREAM), max_rounds)
    while not game.done:
        phase = game.phase
        if isinstance(phase, AwaitingProposal):
            game.submit_proposal(proposer.propose(phase.proposer, game.legal_proposals(), prng))
        else:
            game.submit_response(responder.respond(phase.queue[0], prng))
    return game.trajectory(episode, random_policy_fingerprint(p_accept))


def _chunk(args: tuple) -> list[Trajectory]:
    n, regime, eligibility, seed, start, stop, p_accept, max_rounds = args
    return [play_random_episode(n, regime, eligibility, seed, i, p_accept, max_rounds) for i in range(start, stop)]


def simulate(
    n: int,
    regime: Regime,
    eligibility: Eligibility,
    episodes: int,
    seed: int,
    p_accept: float,
    *,
    workers: int = 1,
    max_rounds: int | None = None,
    chunk_size: int = 5000,
) -> list[Trajectory]:
    """Episodes ``0..episodes-1``, returned in episode order for any worker count."""
    jobs = [
        (n, regime, eligibility, seed, s, min(s + chunk_size, episodes), p_accept, max_rounds)
        for s in range(0, episodes, chunk_size)
    ]
    if workers <= 1 or len(jobs) <= 1:
        return [t for job in jobs for t in _chunk(job)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [t for part in pool.map(_chunk, jobs) for t in part]


@dataclass(frozen=True)
class TrajectoryRecord:
    episode: int
    round: int
    proposer: int
    coalition: str
    replies: tuple[tuple[int, str], ...]
    outcome: str
    terminal: bool
    reason: str | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "episode": self.episode,
                "round": self.round,
                "proposer": self.proposer,
                "coalition": self.coalition,
                "replies": [list(r) for r in self.replies],
                "outcome": self.outcome,
                "terminal": self.terminal,
                "reason": self.reason,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> TrajectoryRecord:
        d = json.loads(line)
        try:
            return cls(
                int(d["episode"]),
                int(d["round"]),
                int(d["proposer"]),
                str(d["coalition"]),
                tuple((int(a), str(r)) for a, r in d["replies"]),
                str(d["outcome"]),
                bool(d["terminal"]),
                d["reason"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(f"bad trajectory record: {line.strip()}") from exc


def to_records(t: Trajectory) -> list[TrajectoryRecord]:
    last = len(t.events) - 1
    return [
        TrajectoryRecord(
            t.episode,
            e.round,
            e.proposer,
            f"{e.coalition:x}",
            tuple((r.responder, r.reply.value) for r in e.responses),
            e.outcome.value,
            i == last,
            t.reason.value if i == last else None,
        )
        for i, e in enumerate(t.events)
    ]


def from_records(records: Sequence[TrajectoryRecord], header: dict) -> Iterator[Trajectory]:
    n = header["n"]
    regime = Regime(header["regime"])
    eligibility = Eligibility(header["eligibility"])
    policy = header["policy"]
    events: list[ProposalEvent] = []
    current = None
    for rec in records:
        if current is None:
            current = rec.episode
        if rec.episode != current:
            raise LogFormatError(f"episode {current} has no terminal record")
        if rec.round != len(events):
            raise LogFormatError(f"episode {rec.episode}: round {rec.round} is not contiguous")
        events.append(
            ProposalEvent(
                rec.round,
                rec.proposer,
                int(rec.coalition, 16),
                tuple(Response(a, Reply(r)) for a, r in rec.replies),
                Outcome(rec.outcome),
            )
        )
        if rec.terminal:
            yield Trajectory(current, n, regime, eligibility, tuple(events), TerminalReason(rec.reason), policy)
            events, current = [], None
    if events:
        raise LogFormatError(f"episode {current} has no terminal record")


def make_header(n: int, regime: Regime, eligibility: Eligibility, policy: str, seed: int, episodes: int) -> dict:
    return {
        "format": LOG_FORMAT,
        "n": n,
        "regime": regime.value,
        "eligibility": eligibility.value,
        "policy": policy,
        "seed": seed,
        "episodes": episodes,
    }


def write_log(fh: IO[str], header: dict, trajectories: Iterable[Trajectory]) -> None:
    fh.write(json.dumps(header, separators=(",", ":")) + "\n")
    for t in trajectories:
        for rec in to_records(t):
            fh.write(rec.to_json() + "\n")


def read_log(path: str | Path) -> tuple[dict, list[Trajectory]]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise LogFormatError(f"{path}: empty log")
        header = json.loads(first)
        if header.get("format") != LOG_FORMAT:
            raise LogFormatError(f"{path}: not a {LOG_FORMAT} log")
        records = [TrajectoryRecord.from_json(line) for line in fh if line.strip()]
    return header, list(from_records(records, header))


def summarize(trajectories: Sequence[Trajectory]) -> dict:
    episodes = len(trajectories)
    rounds = [len(t.events) for t in trajectories]
    by_reason = {r: 0 for r in TerminalReason}
    for t in trajectories:
        by_reason[t.reason] += 1
    return {
        "episodes": episodes,
        "events": sum(rounds),
        "mean_rounds": sum(rounds) / episodes if episodes else 0.0,
        "max_rounds": max(rounds, default=0),
        "agreements": by_reason[TerminalReason.AGREEMENT],
        "exhaustions": by_reason[TerminalReason.EXHAUSTED],
        "truncations": by_reason[TerminalReason.TRUNCATED],
        "agreement_rate": by_reason[TerminalReason.AGREEMENT] / episodes if episodes else 0.0,
        "exhaustion_rate": by_reason[TerminalReason.EXHAUSTED] / episodes if episodes else 0.0,
    }
