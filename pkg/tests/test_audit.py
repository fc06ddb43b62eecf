import math
from collections import Counter

import pytest

from cbg.audit import (
    ABSORBING,
    AuditInputError,
    StateMapper,
    TransitionTable,
    collect,
    independence_test,
    negative_control,
    verify_embedding,
)
from cbg.embedding import HistoryClassifier, naive_key
from cbg.engine import Eligibility, Regime, TerminalReason, Trajectory
from cbg.events import Outcome, ProposalEvent
from cbg.simulate import play_random_episode, simulate
from cbg.stats import bonferroni, chi2_sf

R = HistoryClassifier.REJECTED_SET
F = HistoryClassifier.FULL_HISTORY


def one_round_episode():
    ev = ProposalEvent(0, 1, 0b010, (), Outcome.ACCEPTED)
    return Trajectory(0, 3, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, (ev,), TerminalReason.AGREEMENT, "random(p_accept=0.5)")


def test_empty():
    assert len(collect([])) == 0


def test_single_accepted_round():
    table = collect([one_round_episode()])
    assert table.total == 1
    (row,) = table.counts.values()
    assert row == Counter({ABSORBING: 1})


def test_mixed_configurations_refused():
    a = play_random_episode(3, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, 0, 0, 0.5)
    b = play_random_episode(3, Regime.REPEAT_ALLOWED, Eligibility.ALL_AGENTS, 0, 1, 0.5)
    with pytest.raises(AuditInputError):
        collect([a, b])


def test_learning_logs_refused():
    t = one_round_episode()
    learned = Trajectory(0, 3, t.regime, t.eligibility, t.events, t.reason, "learning(alpha=0.1)")
    with pytest.raises(AuditInputError, match="stationary"):
        collect([learned])


@pytest.mark.parametrize("mapper", list(StateMapper))
@pytest.mark.parametrize("classifier", list(HistoryClassifier))
def test_merge_matches_union(mapper, classifier):
    trajs = simulate(3, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, 600, 3, 0.5)
    whole = collect(trajs, mapper, classifier)
    parts = [collect(trajs[i::3], mapper, classifier) for i in range(3)]
    assert parts[0].merge(parts[1]).merge(parts[2]).counts == whole.counts
    assert parts[2].merge(parts[0].merge(parts[1])).counts == whole.counts


def synthetic(rows_by_class, state=b"s"):
    table = TransitionTable("naive", "rejected-set", (3, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, "random"))
    for cls, row in rows_by_class.items():
        for nxt, k in row.items():
            table.add(state, cls, nxt, k)
    return table


def test_identical_classes_homogeneous():
    rep = independence_test(synthetic({b"a": {b"x": 40, b"y": 60}, b"b": {b"x": 40, b"y": 60}}))
    (rec,) = rep.records
    assert rec.statistic == pytest.approx(0.0, abs=1e-12) and rec.pvalue == pytest.approx(1.0)
    assert not rec.rejected


def test_disjoint_supports_rejected():
    rep = independence_test(synthetic({b"a": {b"x": 500}, b"b": {b"y": 500}}))
    (rec,) = rep.records
    assert rec.pvalue < 1e-6 and rec.rejected


def test_sample_floor_marks_untestable():
    rep = independence_test(synthetic({b"a": {b"x": 500}, b"b": {b"y": 10}}), min_samples=25)
    (rec,) = rep.records
    assert not rec.testable and rep.states_untestable == 1 and rep.states_tested == 0


def test_alpha_zero_rejects_nothing(no_repeat_desk):
    rep = independence_test(collect(no_repeat_desk, StateMapper.NAIVE, R), alpha=0.0)
    assert rep.rejected == [] and rep.rejected_raw == []


def test_naive_no_repeat_rejected(no_repeat_desk):
    rep = independence_test(collect(no_repeat_desk, StateMapper.NAIVE, R), alpha=0.01)
    assert any(r.corrected < 1e-3 for r in rep.rejected)


@pytest.mark.parametrize("classifier", list(HistoryClassifier))
def test_embedded_states_have_one_history(no_repeat_desk, classifier):
    rep = independence_test(collect(no_repeat_desk, StateMapper.EMBEDDED, classifier))
    assert rep.multi_class_states == 0
    assert rep.states_tested == 0 and rep.rejected == []


def test_verify_embedding_holds(no_repeat_desk):
    verdict = verify_embedding(no_repeat_desk)
    assert verdict.holds and verdict.counterexample is None
    assert not verdict.low_power


def test_verify_embedding_catches_forged_key():
    trajs = simulate(3, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, 2000, 1, 0.5)

    def forged(t, i):
        # drops the history: every visit to (proposer, coalition) shares one key
        e = t.events[i]
        return b"E" + naive_key(t.n, e.proposer, e.coalition)

    verdict = verify_embedding(trajs, mapper=forged)
    assert not verdict.holds and verdict.counterexample is not None
    assert "distinct histories" in verdict.reason


def test_verify_embedding_empty():
    verdict = verify_embedding([])
    assert verdict.holds and verdict.low_power and verdict.states == 0


def test_negative_control_small():
    trajs = simulate(3, Regime.REPEAT_ALLOWED, Eligibility.ALL_AGENTS, 20_000, 6, 0.5)
    for clf in HistoryClassifier:
        nc = negative_control(trajs, alpha=0.01, classifier=clf)
        assert nc.within_bound
    assert negative_control(trajs, alpha=0.0).report.rejected_raw == []


def test_negative_control_refuses_no_repeat(no_repeat_desk):
    with pytest.raises(AuditInputError):
        negative_control(no_repeat_desk[:10])


def test_report_serialisation(no_repeat_desk):
    rep = independence_test(collect(no_repeat_desk[:5000], StateMapper.NAIVE, R))
    doc = rep.to_dict()
    assert doc["summary"]["correction"] == "bonferroni"
    for rec in doc["states"]:
        if rec["G"] is not None:
            assert len(f"{rec['G']:.10g}".replace(".", "").lstrip("0")) <= 6
            assert 0.0 <= rec["p"] <= 1.0


def test_empirical_conditionals_consistent_with_exact(no_repeat_desk, exact_no_repeat):
    """Goodness of fit of every (state, class) row against the exact law.

    Residual deviations are what multinomial sampling predicts; no row is
    rejected after Bonferroni at 1e-3.
    """
    table = collect(no_repeat_desk, StateMapper.NAIVE, R)
    exact = exact_no_repeat.naive[R]
    results = []
    for (s, c), row in table.counts.items():
        law = exact[(s, c)].distribution()
        assert set(row) <= {k for k, v in law.items() if v > 0}
        m = sum(row.values())
        if m < 25:
            continue
        g = 2 * sum(o * math.log(o / (m * float(law[k]))) for k, o in row.items())
        results.append(chi2_sf(g, sum(1 for v in law.values() if v > 0) - 1))
    assert results
    assert min(bonferroni(p, len(results)) for p in results) > 1e-3


def test_well_sampled_conditionals_within_tv(no_repeat_desk, exact_no_repeat):
    table = collect(no_repeat_desk, StateMapper.NAIVE, R)
    checked = 0
    for (s, c), row in table.counts.items():
        m = sum(row.values())
        if m < 5000:
            continue
        law = exact_no_repeat.naive_conditional(R, s, c)
        emp = {k: v / m for k, v in row.items()}
        assert 0.5 * sum(abs(emp.get(k, 0) - float(law.get(k, 0))) for k in set(emp) | set(law)) <= 0.02
        checked += 1
    assert checked >= 9
