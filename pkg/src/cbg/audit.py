"""Empirical Markov-property audit of bargaining trajectories.

For every observed transition ``s_t -> s_{t+1}`` the audit records the
state key, a key for the history class of everything before round ``t``,
and the next-state key (``ABSORBING`` after the final round). A state
whose next-state distribution differs across history classes witnesses
non-Markovian dynamics; the per-state G-test of homogeneity decides, with
Bonferroni correction over the tested states.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence, Union

from .embedding import HistoryClassifier, embedded_key, history_class_key, naive_key
from .engine import Regime, Trajectory
from .stats import bonferroni, false_positive_bound, g_test_homogeneity

ABSORBING = b"\x00absorbing"

DEFAULT_ALPHA = 0.01
DEFAULT_MIN_SAMPLES = 25


class AuditInputError(ValueError):
    pass


class StateMapper(Enum):
    NAIVE = "naive"
    EMBEDDED = "embedded"


KeyFn = Callable[[Trajectory, int], bytes]
Mapper = Union[StateMapper, KeyFn]
Classifier = Union[HistoryClassifier, KeyFn]


def _state_keys(t: Trajectory, mapper: Mapper) -> list[bytes]:
    if mapper is StateMapper.NAIVE:
        return [naive_key(t.n, e.proposer, e.coalition) for e in t.events]
    if mapper is StateMapper.EMBEDDED:
        keys = []
        history = b""
        for e in t.events:
            keys.append(embedded_key(t.n, e.proposer, e.coalition, history))
            history += e.packed
        return keys
    return [mapper(t, i) for i in range(len(t.events))]


def _class_keys(t: Trajectory, classifier: Classifier) -> list[bytes]:
    if isinstance(classifier, HistoryClassifier):
        return [history_class_key(t.events[:i], classifier) for i in range(len(t.events))]
    return [classifier(t, i) for i in range(len(t.events))]


def _tag(x) -> str:
    return x.value if isinstance(x, Enum) else getattr(x, "__name__", "custom")


@dataclass
class TransitionTable:
    mapper: str
    classifier: str
    config: tuple | None = None
    counts: dict[tuple[bytes, bytes], Counter] = field(default_factory=dict)

    def add(self, state: bytes, cls: bytes, nxt: bytes, k: int = 1) -> None:
        row = self.counts.get((state, cls))
        if row is None:
            row = self.counts[(state, cls)] = Counter()
        row[nxt] += k

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(sum(c.values()) for c in self.counts.values())

    def merge(self, other: TransitionTable) -> TransitionTable:
        if (self.mapper, self.classifier) != (other.mapper, other.classifier):
            raise AuditInputError("cannot merge tables built with different mappers or classifiers")
        if self.config is not None and other.config is not None and self.config != other.config:
            raise AuditInputError("cannot merge tables from different game configurations")
        out = TransitionTable(self.mapper, self.classifier, self.config or other.config)
        for src in (self, other):
            for (s, c), row in sorted(src.counts.items()):
                for nxt, k in sorted(row.items()):
                    out.add(s, c, nxt, k)
        return out

    def by_state(self) -> dict[bytes, dict[bytes, Counter]]:
        out: dict[bytes, dict[bytes, Counter]] = {}
        for (s, c), row in self.counts.items():
            out.setdefault(s, {})[c] = row
        return out

    def distribution(self, state: bytes, cls: bytes) -> dict[bytes, float]:
        row = self.counts[(state, cls)]
        total = sum(row.values())
        return {k: v / total for k, v in row.items()}


def _check_inputs(trajectories: Sequence[Trajectory], allow_learning: bool) -> tuple | None:
    configs = {t.config for t in trajectories}
    if len(configs) > 1:
        raise AuditInputError(f"trajectories mix {len(configs)} game/policy configurations")
    if not allow_learning:
        for t in trajectories:
            if t.policy.startswith("learning"):
                raise AuditInputError(
                    "refusing to audit trajectories from learning agents: their policies change "
                    "during the run, so transition estimates are not stationary"
                )
            break
    return next(iter(configs)) if configs else None


def collect(
    trajectories: Iterable[Trajectory],
    mapper: Mapper = StateMapper.NAIVE,
    classifier: Classifier = HistoryClassifier.REJECTED_SET,
    *,
    allow_learning: bool = False,
) -> TransitionTable:
    trajectories = list(trajectories)
    config = _check_inputs(trajectories, allow_learning)
    table = TransitionTable(_tag(mapper), _tag(classifier), config)
    for t in trajectories:
        states = _state_keys(t, mapper)
        classes = _class_keys(t, classifier)
        for i, s in enumerate(states):
            table.add(s, classes[i], states[i + 1] if i + 1 < len(states) else ABSORBING)
    return table


@dataclass(frozen=True)
class StateRecord:
    state: bytes
    classes: int  # all observed history classes
    class_sizes: tuple[int, ...]  # samples in each class that met the floor, descending
    statistic: float | None
    dof: int | None
    pvalue: float | None
    corrected: float | None = None  # Bonferroni
    rejected: bool = False

    @property
    def testable(self) -> bool:
        return self.pvalue is not None


@dataclass(frozen=True)
class AuditReport:
    mapper: str
    classifier: str
    policy: str
    alpha: float
    min_samples: int
    records: tuple[StateRecord, ...]
    correction: str = "bonferroni"

    @property
    def tested(self) -> list[StateRecord]:
        return [r for r in self.records if r.testable]

    @property
    def states_tested(self) -> int:
        return len(self.tested)

    @property
    def states_untestable(self) -> int:
        return len(self.records) - self.states_tested

    @property
    def multi_class_states(self) -> int:
        return sum(1 for r in self.records if r.classes >= 2)

    @property
    def rejected(self) -> list[StateRecord]:
        return [r for r in self.records if r.rejected]

    @property
    def rejected_raw(self) -> list[StateRecord]:
        """States with uncorrected p < alpha."""
        return [r for r in self.tested if r.pvalue < self.alpha]

    def summary(self) -> dict:
        return {
            "states": len(self.records),
            "states_tested": self.states_tested,
            "states_untestable": self.states_untestable,
            "multi_class_states": self.multi_class_states,
            "states_rejected": len(self.rejected),
            "states_rejected_uncorrected": len(self.rejected_raw),
            "alpha": self.alpha,
            "min_samples": self.min_samples,
            "correction": self.correction,
        }

    def to_dict(self) -> dict:
        return {
            "mapper": self.mapper,
            "classifier": self.classifier,
            "policy": self.policy,
            "summary": self.summary(),
            "states": [
                {
                    "state": r.state.hex(),
                    "classes": r.classes,
                    "class_sizes": list(r.class_sizes),
                    "status": "tested" if r.testable else "untestable",
                    "G": None if r.statistic is None else float(f"{r.statistic:.6g}"),
                    "dof": r.dof,
                    "p": r.pvalue,
                    "p_bonferroni": r.corrected,
                    "rejected": r.rejected,
                }
                for r in self.records
            ],
        }


def independence_test(
    table: TransitionTable,
    alpha: float = DEFAULT_ALPHA,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> AuditReport:
    """Per-state G-test of homogeneity of next-state counts across history
    classes. Classes under ``min_samples`` are dropped; a state with fewer
    than two remaining classes is untestable, which is not a pass."""
    raw = []
    for state, classes in sorted(table.by_state().items()):
        kept = sorted(
            (row for row in classes.values() if sum(row.values()) >= min_samples),
            key=lambda r: -sum(r.values()),
        )
        if len(kept) < 2:
            raw.append((state, len(classes), tuple(sum(r.values()) for r in kept), None))
            continue
        support = sorted(set().union(*kept))
        g = g_test_homogeneity([[row.get(k, 0) for k in support] for row in kept])
        raw.append((state, len(classes), tuple(sum(r.values()) for r in kept), g))

    m = sum(1 for *_, g in raw if g is not None)
    records = []
    for state, nclasses, sizes, g in raw:
        if g is None:
            records.append(StateRecord(state, nclasses, sizes, None, None, None))
            continue
        corrected = bonferroni(g.pvalue, m)
        records.append(StateRecord(state, nclasses, sizes, g.statistic, g.dof, g.pvalue, corrected, corrected < alpha))
    config = table.config
    policy = config[3] if config else "none"
    return AuditReport(table.mapper, table.classifier, policy, alpha, min_samples, tuple(records))


@dataclass(frozen=True)
class EmbeddingVerdict:
    holds: bool
    counterexample: bytes | None = None
    reason: str = ""
    states: int = 0
    low_power: bool = False


def _episode_parity(t: Trajectory, i: int) -> bytes:
    return struct.pack(">B", t.episode & 1)


def verify_embedding(
    trajectories: Iterable[Trajectory],
    mapper: Mapper = StateMapper.EMBEDDED,
    alpha: float = DEFAULT_ALPHA,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> EmbeddingVerdict:
    """Check that each state key is reached by exactly one history and that
    repeated visits to a state share one next-state distribution.

    Repeat visits are split by episode parity and the halves compared with
    the same G-test the naive audit uses.
    """
    trajectories = list(trajectories)
    full = collect(trajectories, mapper, HistoryClassifier.FULL_HISTORY)
    states = full.by_state()
    for state, classes in sorted(states.items()):
        if len(classes) >= 2:
            return EmbeddingVerdict(False, state, f"state reached by {len(classes)} distinct histories", len(states))
    split = independence_test(collect(trajectories, mapper, _episode_parity), alpha, min_samples)
    if split.rejected:
        bad = split.rejected[0]
        return EmbeddingVerdict(False, bad.state, f"next-state distribution differs across visits (p={bad.corrected:.3g})", len(states))
    return EmbeddingVerdict(True, None, "", len(states), low_power=split.states_tested == 0)


@dataclass(frozen=True)
class NegativeControl:
    report: AuditReport
    fraction_rejected: float
    bound: float

    @property
    def within_bound(self) -> bool:
        return self.fraction_rejected <= self.bound


def negative_control(
    trajectories: Iterable[Trajectory],
    alpha: float = DEFAULT_ALPHA,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    classifier: HistoryClassifier = HistoryClassifier.REJECTED_SET,
) -> NegativeControl:
    """Naive-state audit of repeat-allowed play by memoryless policies.

    Such play is Markov in the naive state, so the uncorrected per-state
    rejection rate should stay within the binomial false-positive bound.
    """
    trajectories = list(trajectories)
    for t in trajectories:
        if t.regime is not Regime.REPEAT_ALLOWED or not t.policy.startswith("random"):
            raise AuditInputError("negative control needs repeat-allowed play by memoryless random policies")
    report = independence_test(collect(trajectories, StateMapper.NAIVE, classifier), alpha, min_samples)
    m = report.states_tested
    frac = len(report.rejected_raw) / m if m else 0.0
    return NegativeControl(report, frac, false_positive_bound(alpha, m))
