import numpy as np
import pytest

from pvglab import nnkit as nn
from pvglab.errors import EnumerationCapError, UsageError
from pvglab.game import TrainConfig
from pvglab.rng import stream
from pvglab.stress import (
    acceptance_for_messages,
    desiderata_check,
    enumerate_acceptance,
    metrics_from_acceptance,
    precision_recall,
    prover_modal_messages,
    retrain_prover,
    stress_test,
    verifier_fingerprint,
    worst_case_messages,
)
from pvglab.tasks import BECTask, BECTaskConfig, Network


def small_task(restrict=True, tokens=4):
    return BECTask(BECTaskConfig(tokens=tokens, restrict_channel=restrict, width=16))


def build(task, seed=0):
    return task.build_agents(stream(seed, 0))


def set_token_verifier(agents, accept_tokens, tokens):
    """Verifier accepting exactly the given tokens, rejecting the rest."""
    spec = nn.NetworkSpec((nn.Linear(tokens, 2),))
    w = np.zeros((tokens, 2))
    for t in range(tokens):
        w[t, 1 if t in accept_tokens else 0] = 50.0
    params = {0: np.concatenate([w.ravel(), np.zeros(2)])}
    agents.verifier = Network(spec, params)


class TestPrecisionRecall:
    def test_all_correct(self):
        p, r, counts, vac = precision_recall([1, 0, 1, 0], [1, 0, 1, 0])
        assert (p, r) == (1.0, 1.0)
        assert counts == {"tp": 2, "fp": 0, "tn": 2, "fn": 0}
        assert not vac

    def test_no_positive_predictions_vacuous(self):
        p, r, counts, vac = precision_recall([0, 0, 0], [1, 0, 1])
        assert p == 1.0 and vac
        assert r == 0.0

    def test_empty_raises(self):
        with pytest.raises(UsageError):
            precision_recall([], [])

    def test_nonbinary_rejected(self):
        with pytest.raises(UsageError):
            precision_recall([0, 2], [0, 1])

    def test_mixed_counts(self):
        p, r, counts, _ = precision_recall([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
        assert counts == {"tp": 2, "fp": 1, "tn": 1, "fn": 1}
        assert p == pytest.approx(2 / 3)
        assert r == pytest.approx(2 / 3)


class TestEnumeration:
    def test_single_message_space(self):
        task = small_task(restrict=False, tokens=2)
        agents = build(task)
        batch = task.sample_batch(8, stream(1, 0))
        onehot, acc = worst_case_messages(task, agents, batch)
        assert onehot.shape == (8, 2)
        assert np.array_equal(onehot.sum(axis=1), np.ones(8))

    def test_worst_case_dominates_every_message(self):
        task = small_task()
        agents = build(task)
        batch = task.sample_batch(30, stream(2, 0))
        onehot, best = worst_case_messages(task, agents, batch)
        legal = task.legal_tokens(batch)
        for j in range(task.message_count):
            probe = np.zeros((30, task.message_count))
            probe[:, j] = 1.0
            acc = acceptance_for_messages(task, agents, batch, probe)
            admissible = legal[:, j]
            assert np.all(best[admissible] >= acc[admissible] - 1e-12)

    def test_worst_case_respects_channel(self):
        task = small_task()
        agents = build(task)
        batch = task.sample_batch(50, stream(3, 0))
        onehot, _ = worst_case_messages(task, agents, batch)
        sent = np.argmax(onehot, axis=1)
        bits = batch.meta["bits"]
        assert not np.any((bits == 0) & (sent == 1))
        assert not np.any((bits == 1) & (sent == 0))

    def test_cap_enforced(self):
        task = small_task()
        agents = build(task)
        batch = task.sample_batch(2, stream(4, 0))
        import pvglab.stress as stress

        old = stress.ENUMERATION_CAP
        stress.ENUMERATION_CAP = 2
        try:
            with pytest.raises(EnumerationCapError):
                enumerate_acceptance(task, agents, batch)
        finally:
            stress.ENUMERATION_CAP = old


class TestMetricsFromAcceptance:
    def test_sound_verifier_vacuous_precision(self):
        task = small_task()
        batch = task.sample_batch(40, stream(5, 0))
        acceptance = np.where(batch.y == 1, 0.9, 0.1)
        m = metrics_from_acceptance("wc", batch, acceptance)
        assert m.recall == 1.0 and m.precision == 1.0 and m.precision_vacuous
        assert m.counts["fp"] == 0

    def test_fully_fooled_verifier(self):
        task = small_task()
        batch = task.sample_batch(40, stream(6, 0))
        m = metrics_from_acceptance("wc", batch, np.full(40, 0.9))
        assert m.recall == 1.0 and m.precision == 0.0

    def test_partially_fooled_graded(self):
        task = small_task()
        batch = task.sample_batch(100, stream(7, 0))
        acceptance = np.where(batch.y == 1, 0.9, 0.1)
        neg_idx = np.flatnonzero(batch.y == 0)[:3]
        acceptance[neg_idx] = 0.9  # three negatives flip
        m = metrics_from_acceptance("wc", batch, acceptance)
        n_neg = (batch.y == 0).sum()
        assert m.precision == pytest.approx((n_neg - 3) / n_neg)
        assert m.counts["fp"] == 3


class TestDesiderata:
    def test_token1_protocol_satisfies_both(self):
        task = small_task(restrict=True)
        agents = build(task)
        set_token_verifier(agents, {1}, 4)
        batch = task.sample_batch(200, stream(8, 0))
        recall_possible, precision_guaranteed = desiderata_check(task, agents, batch)
        assert recall_possible and precision_guaranteed

    def test_always_accept_fails_precision(self):
        task = small_task()
        agents = build(task)
        set_token_verifier(agents, {0, 1, 2, 3}, 4)
        batch = task.sample_batch(50, stream(9, 0))
        recall_possible, precision_guaranteed = desiderata_check(task, agents, batch)
        assert recall_possible and not precision_guaranteed

    def test_always_reject_fails_recall(self):
        task = small_task()
        agents = build(task)
        set_token_verifier(agents, set(), 4)
        batch = task.sample_batch(50, stream(10, 0))
        recall_possible, precision_guaranteed = desiderata_check(task, agents, batch)
        assert not recall_possible and precision_guaranteed

    def test_agreement_with_worst_case_precision(self):
        # the precision guarantee holds iff the worst-case attack scores 1.0
        task = small_task()
        batch = task.sample_batch(100, stream(11, 0))
        for accept in ({1}, {1, 2}):
            agents = build(task)
            set_token_verifier(agents, accept, 4)
            _, guaranteed = desiderata_check(task, agents, batch)
            _, acc = worst_case_messages(task, agents, batch)
            m = metrics_from_acceptance("wc", batch, acc)
            assert guaranteed == (m.precision == 1.0)


class TestRetraining:
    def test_zero_steps_equal_pre_metrics(self):
        task = small_task()
        agents = build(task)
        batch = task.sample_batch(50, stream(12, 0))
        cfg = TrainConfig(batch_size=16, max_steps=1, seed=5)
        _, m0 = retrain_prover(task, agents, batch, steps=0, config=cfg)
        onehot = prover_modal_messages(task, agents, batch)
        acc = acceptance_for_messages(task, agents, batch, onehot)
        m_direct = metrics_from_acceptance("retrained-prover", batch, acc)
        assert m0.counts == m_direct.counts
        assert m0.recall == m_direct.recall

    def test_verifier_untouched_by_attacks(self):
        task = small_task()
        agents = build(task)
        batch = task.sample_batch(60, stream(13, 0))
        cfg = TrainConfig(batch_size=32, max_steps=1, seed=6)
        before = verifier_fingerprint(agents)
        report = stress_test(task, agents, "pvg", batch, retrain_steps=5, config=cfg)
        assert verifier_fingerprint(agents) == before
        assert {e.attack for e in report.entries} == {
            "retrained-prover",
            "worst-case-messages",
        }

    def test_worst_case_dominates_retrained_prover(self):
        task = small_task()
        agents = build(task)
        batch = task.sample_batch(40, stream(14, 0))
        cfg = TrainConfig(batch_size=32, max_steps=1, seed=7)
        attacked, _ = retrain_prover(task, agents, batch, steps=20, config=cfg)
        onehot = prover_modal_messages(task, attacked, batch)
        acc_retrained = acceptance_for_messages(task, agents, batch, onehot)
        _, acc_worst = worst_case_messages(task, agents, batch)
        assert np.all(acc_worst >= acc_retrained - 1e-12)

    def test_retrained_prover_learns_to_convince(self):
        task = small_task()
        agents = build(task)
        set_token_verifier(agents, {2}, 4)  # erasure token accepted: attackable
        batch = task.sample_batch(80, stream(15, 0))
        cfg = TrainConfig(batch_size=64, prover_lr=0.01, max_steps=1, seed=8)
        _, metrics = retrain_prover(task, agents, batch, steps=150, config=cfg)
        assert metrics.recall == 1.0
        assert metrics.precision == 0.0  # every negative reaches token 2


class TestContinuousAscent:
    def test_dominates_enumeration_and_stays_on_simplex(self):
        from pvglab.stress import continuous_message_ascent

        task = small_task()
        agents = build(task)
        batch = task.sample_batch(20, stream(17, 0))
        _, hard_acc = worst_case_messages(task, agents, batch)
        weights, soft_acc = continuous_message_ascent(
            task, agents, batch, steps=30, restarts=1, rng=stream(17, 1)
        )
        assert np.all(soft_acc >= hard_acc - 1e-9)
        assert np.all(weights >= -1e-12)
        assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-9)
        # no mass on channel-forbidden tokens
        assert np.all(weights[~task.legal_tokens(batch)] == 0.0)


class TestReportRendering:
    def test_json_and_text(self):
        task = small_task()
        agents = build(task)
        batch = task.sample_batch(30, stream(16, 0))
        cfg = TrainConfig(batch_size=16, max_steps=1, seed=9)
        report = stress_test(task, agents, "pvg", batch, retrain_steps=2, config=cfg)
        d = report.to_json_dict()
        assert d["mode"] == "pvg" and len(d["entries"]) == 2
        text = report.render()
        assert "retrained-prover" in text and "worst-case-messages" in text
