"""Agent policies: memoryless random baselines and tabular Q-learners.

Learners observe the filtration (see :func:`cbg.embedding.observation_key`)
and follow the filtrated bargaining loop: clear the history each episode,
draw a proposer, let it name a coalition, collect replies until the first
rejection, and update Q values from the per-round cost and the acceptance
reward.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .embedding import observation_key
from .engine import (
    AwaitingProposal,
    ConfigurationError,
    Eligibility,
    GameHandle,
    Regime,
    TerminalReason,
    Trajectory,
)
from .events import MAX_AGENTS, Coalition, Reply
from .rng import ENGINE_STREAM, POLICY_STREAM, stream

MAX_LEARNING_AGENTS = 6

ACCEPT_KEY = "accept"
REJECT_KEY = "reject"
REPLY_ACTIONS = [ACCEPT_KEY, REJECT_KEY]


class PolicyError(ValueError):
    pass


def coalition_action(c: Coalition) -> str:
    return f"c{c:04x}"


def action_coalition(key: str) -> Coalition:
    return int(key[1:], 16)


# -- memoryless baselines ---------------------------------------------------


class RandomProposer:
    """Uniform over the legal set."""

    fingerprint = "uniform"

    def distribution(self, agent: int, legal: Sequence[Coalition]) -> dict[Coalition, float]:
        return {c: 1.0 / len(legal) for c in legal}

    def propose(self, agent: int, legal: Sequence[Coalition], rng: random.Random) -> Coalition:
        if not legal:
            raise PolicyError(f"agent {agent} has no legal proposal")
        return legal[rng.randrange(len(legal))] if len(legal) > 1 else legal[0]


class RandomResponder:
    """Accepts i.i.d. with probability ``p_accept``, ignoring the history."""

    def __init__(self, p_accept: float):
        if not 0.0 <= p_accept <= 1.0:
            raise ConfigurationError(f"p_accept must lie in [0, 1], got {p_accept}")
        self.p_accept = p_accept

    @property
    def fingerprint(self) -> str:
        return f"p_accept={self.p_accept!r}"

    def distribution(self, agent: int) -> dict[Reply, float]:
        return {Reply.ACCEPT: self.p_accept, Reply.REJECT: 1.0 - self.p_accept}

    def respond(self, agent: int, rng: random.Random) -> Reply:
        return Reply.ACCEPT if rng.random() < self.p_accept else Reply.REJECT


def random_proposer_policy() -> RandomProposer:
    return RandomProposer()


def random_responder_policy(p_accept: float) -> RandomResponder:
    return RandomResponder(p_accept)


def random_policy_fingerprint(p_accept: float) -> str:
    return f"random(p_accept={p_accept!r})"


# -- tabular Q-learning ------------------------------------------------------


@dataclass
class QTable:
    """Sparse action values; unvisited entries read as zero."""

    alpha: float = 0.1
    gamma: float = 0.95
    epsilon: float = 0.1
    values: dict[tuple[bytes, str], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    def __len__(self) -> int:
        return len(self.values)

    def get(self, obs: bytes, action: str) -> float:
        return self.values.get((obs, action), 0.0)

    def best_value(self, obs: bytes, legal: Sequence[str]) -> float:
        return max((self.values.get((obs, a), 0.0) for a in legal), default=0.0)

    def export_lines(self) -> list[str]:
        """``<hex obs key>\\t<action key>\\t<value, 17 significant digits>`` sorted by key."""
        return [f"{obs.hex()}\t{action}\t{value:.16e}" for (obs, action), value in sorted(self.values.items())]

    @classmethod
    def parse_lines(cls, lines: Sequence[str], **hyper) -> QTable:
        q = cls(**hyper)
        for line in lines:
            if not line.strip():
                continue
            obs, action, value = line.rstrip("\n").split("\t")
            q.values[(bytes.fromhex(obs), action)] = float(value)
        return q


def epsilon_greedy_action(
    q: QTable,
    obs: bytes,
    legal: Sequence[str],
    rng: random.Random,
    epsilon: float | None = None,
) -> str:
    """Uniform over ``legal`` with probability epsilon, else the argmax with
    ties going to the smallest action key."""
    if not legal:
        raise PolicyError("no legal action")
    eps = q.epsilon if epsilon is None else epsilon
    if rng.random() < eps:
        return legal[rng.randrange(len(legal))]
    values = q.values
    best = None
    best_v = -math.inf
    for a in sorted(legal):
        v = values.get((obs, a), 0.0)
        if v > best_v:
            best, best_v = a, v
    return best


def q_update(
    q: QTable,
    obs: bytes,
    action: str,
    reward: float,
    next_obs: bytes | None,
    next_legal: Sequence[str],
    terminal: bool,
) -> float:
    """One-step TD update in place; returns the new value of ``(obs, action)``."""
    old = q.values.get((obs, action), 0.0)
    bootstrap = 0.0 if terminal or next_obs is None else q.best_value(next_obs, next_legal)
    new = old + q.alpha * (reward + q.gamma * bootstrap - old)
    q.values[(obs, action)] = new
    return new


@dataclass(frozen=True)
class RewardScheme:
    acceptance: float = 1.0  # to each member of the accepted coalition
    step: float = -0.05  # to every agent, per rejected round

    def __post_init__(self) -> None:
        if not (math.isfinite(self.acceptance) and math.isfinite(self.step)):
            raise ConfigurationError("rewards must be finite")
        if self.step > 0:
            raise ConfigurationError("per-round cost must be <= 0")

    def episode_rewards(self, t: Trajectory) -> list[float]:
        out = [0.0] * t.n
        rejections = sum(1 for e in t.events if e.rejected)
        for i in range(t.n):
            out[i] = rejections * self.step
        if t.reason is TerminalReason.AGREEMENT:
            c = t.events[-1].coalition
            for i in range(t.n):
                if c >> i & 1:
                    out[i] += self.acceptance
        return out


@dataclass(frozen=True)
class EpisodeStats:
    episode: int
    rounds: int
    reason: TerminalReason
    mean_reward: float  # per agent
    proposals: int
    repeat_proposals: int  # proposals of a coalition already rejected this episode


def episode_stats(t: Trajectory, scheme: RewardScheme) -> EpisodeStats:
    seen: set[Coalition] = set()
    repeats = 0
    for e in t.events:
        if e.coalition in seen:
            repeats += 1
        if e.rejected:
            seen.add(e.coalition)
    rewards = scheme.episode_rewards(t)
    return EpisodeStats(t.episode, len(t.events), t.reason, sum(rewards) / t.n, len(t.events), repeats)


@dataclass(frozen=True)
class LearningConfig:
    n: int = 3
    regime: Regime = Regime.LEARNED_AVOIDANCE
    eligibility: Eligibility = Eligibility.ALL_AGENTS
    episodes: int = 50_000
    seed: int = 0
    alpha: float = 0.1
    gamma: float = 0.95
    epsilon: float = 0.1
    epsilon_min: float = 0.01
    rewards: RewardScheme = RewardScheme()
    max_rounds: int = 32

    def __post_init__(self) -> None:
        if not 1 <= self.n <= min(MAX_LEARNING_AGENTS, MAX_AGENTS):
            raise ConfigurationError(f"learning runs support 1 <= n <= {MAX_LEARNING_AGENTS}, got {self.n}")
        if self.episodes < 0:
            raise ConfigurationError("episodes must be >= 0")
        if self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be >= 1")
        if not 0.0 <= self.epsilon_min <= 1.0:
            raise ConfigurationError("epsilon_min must lie in [0, 1]")
        QTable(self.alpha, self.gamma, self.epsilon)  # validates the hyperparameters

    def epsilon_at(self, episode: int) -> float:
        """Linear decay from ``epsilon`` to ``epsilon_min`` over the run; never increases."""
        if self.epsilon <= self.epsilon_min or self.episodes <= 1:
            return self.epsilon
        frac = episode / (self.episodes - 1)
        return self.epsilon + (self.epsilon_min - self.epsilon) * frac

    @property
    def fingerprint(self) -> str:
        return (
            f"learning(alpha={self.alpha!r},gamma={self.gamma!r},epsilon={self.epsilon!r},"
            f"epsilon_min={self.epsilon_min!r},r_acc={self.rewards.acceptance!r},"
            f"r_step={self.rewards.step!r})"
        )


@dataclass
class LearningResult:
    tables: list[QTable]
    stats: list[EpisodeStats]
    trajectories: list[Trajectory] | None = None


def run_learning(config: LearningConfig, keep_trajectories: bool = False) -> LearningResult:
    n = config.n
    scheme = config.rewards
    tables = [QTable(config.alpha, config.gamma, config.epsilon) for _ in range(n)]
    stats: list[EpisodeStats] = []
    kept: list[Trajectory] | None = [] if keep_trajectories else None

    for ep in range(config.episodes):
        eps = config.epsilon_at(ep)
        game = GameHandle(n, config.regime, config.eligibility, stream(config.seed, ep, ENGINE_STREAM), config.max_rounds)
        prng = stream(config.seed, ep, POLICY_STREAM)
        # agent -> (obs, action, reward accumulated since acting)
        pending: dict[int, list] = {}

        def act(agent: int, obs: bytes, legal: list[str]) -> str:
            q = tables[agent]
            prev = pending.get(agent)
            if prev is not None:
                q_update(q, prev[0], prev[1], prev[2], obs, legal, terminal=False)
            a = epsilon_greedy_action(q, obs, legal, prng, eps)
            pending[agent] = [obs, a, 0.0]
            return a

        while not game.done:
            phase = game.phase
            before = game.round
            if isinstance(phase, AwaitingProposal):
                agent = phase.proposer
                legal = [coalition_action(c) for c in game.legal_proposals()]
                choice = act(agent, observation_key(agent, n, game.history), legal)
                game.submit_proposal(action_coalition(choice))
            else:
                agent = phase.queue[0]
                pend = (phase.state.proposer, phase.state.coalition)
                obs = observation_key(agent, n, game.history, pend, len(phase.replies))
                choice = act(agent, obs, REPLY_ACTIONS)
                game.submit_response(Reply.ACCEPT if choice == ACCEPT_KEY else Reply.REJECT)
            if game.round > before and game.filtration.events[-1].rejected:
                for p in pending.values():
                    p[2] += scheme.step

        t = game.trajectory(ep, config.fingerprint)
        accepted = t.events[-1].coalition if t.reason is TerminalReason.AGREEMENT else 0
        for agent, (obs, a, r) in pending.items():
            if accepted >> agent & 1:
                r += scheme.acceptance
            q_update(tables[agent], obs, a, r, None, (), terminal=True)
        stats.append(episode_stats(t, scheme))
        if kept is not None:
            kept.append(t)
    return LearningResult(tables, stats, kept)


def learning_curve(stats: Sequence[EpisodeStats], block: int = 1000) -> list[dict]:
    """Per-block aggregates: mean per-agent reward, mean rounds, repeat-proposal rate."""
    rows = []
    for start in range(0, len(stats), block):
        chunk = stats[start : start + block]
        proposals = sum(s.proposals for s in chunk)
        rows.append(
            {
                "episode": chunk[-1].episode + 1,
                "mean_reward": sum(s.mean_reward for s in chunk) / len(chunk),
                "mean_rounds": sum(s.rounds for s in chunk) / len(chunk),
                "repeat_rate": sum(s.repeat_proposals for s in chunk) / proposals if proposals else 0.0,
            }
        )
    return rows
