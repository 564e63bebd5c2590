"""Frozen-verifier stress tests.

Robustness of a learned verifier is measured by freezing it and handing
the attacker more power in two ways: retraining the prover from its
checkpoint against the frozen verifier, and exhaustively enumerating the
discrete message space per example to find the most convincing message
(exact on these channels, and strictly stronger than any optimizer-based
message search).  The attacker always argues for label 1 and respects
the channel's structural restrictions; enumeration covers exactly the
messages some admissible prover could send.

Reported metrics split by what each desideratum quantifies:

* ``recall``: classical recall over the attacked positive examples: can
  messages make the verifier accept what it should accept?
* ``precision``: the precision guarantee under attack, measured on the
  attacked negative examples.  It is 1.0 when no negative can be pushed
  over the acceptance threshold (classical precision is then vacuously
  perfect: the attack produces zero positive predictions), 0.0 when
  every negative can (classical precision over the attacked set), and in
  between it is the fraction of negatives the attack fails to flip.

Full confusion counts accompany every entry so any other summary can be
recomputed.  TP/FN come from the attacked positives, FP/TN from the
attacked negatives.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import nnkit as nn
from . import rng as rngmod
from .errors import EnumerationCapError, UsageError
from .game import TrainConfig, verifier_logits, _prover_update
from .tasks import AgentPair, Batch

ENUMERATION_CAP = 4096


def precision_recall(predictions, labels):
    """Standard precision/recall with the vacuous-soundness convention.

    Zero positive predictions make precision 1.0 (nothing asserted,
    nothing wrong) and the ``vacuous`` flag marks it.  Returns
    (precision, recall, counts dict, vacuous).
    """
    predictions = np.asarray(predictions).astype(int)
    labels = np.asarray(labels).astype(int)
    if predictions.size == 0:
        raise UsageError("empty prediction set")
    if predictions.shape != labels.shape:
        raise UsageError("predictions and labels must align")
    if not (np.isin(predictions, (0, 1)).all() and np.isin(labels, (0, 1)).all()):
        raise UsageError("predictions and labels must be binary")
    tp = int(((predictions == 1) & (labels == 1)).sum())
    fp = int(((predictions == 1) & (labels == 0)).sum())
    tn = int(((predictions == 0) & (labels == 0)).sum())
    fn = int(((predictions == 0) & (labels == 1)).sum())
    vacuous = (tp + fp) == 0
    precision = 1.0 if vacuous else tp / (tp + fp)
    recall = 0.0 if (tp + fn) == 0 else tp / (tp + fn)
    return precision, recall, {"tp": tp, "fp": fp, "tn": tn, "fn": fn}, vacuous


@dataclass
class AttackMetrics:
    attack: str
    recall: float
    precision: float
    precision_vacuous: bool
    counts: dict
    mean_acceptance_positives: float
    mean_acceptance_negatives: float

    def to_json_dict(self):
        return {
            "attack": self.attack,
            "recall": self.recall,
            "precision": self.precision,
            "precision_vacuous": self.precision_vacuous,
            "counts": self.counts,
            "mean_acceptance_positives": self.mean_acceptance_positives,
            "mean_acceptance_negatives": self.mean_acceptance_negatives,
        }


@dataclass
class StressReport:
    mode: str  # "pvg" or "collaborative"
    entries: list = field(default_factory=list)

    def entry(self, attack: str) -> AttackMetrics:
        for e in self.entries:
            if e.attack == attack:
                return e
        raise KeyError(attack)

    def to_json_dict(self):
        return {"mode": self.mode, "entries": [e.to_json_dict() for e in self.entries]}

    def to_json(self):
        return json.dumps(self.to_json_dict(), indent=2)

    def render(self) -> str:
        lines = [
            f"frozen-verifier stress report ({self.mode})",
            f"{'attack':<24}{'recall':>8}{'precision':>11}",
        ]
        for e in self.entries:
            mark = "*" if e.precision_vacuous else ""
            lines.append(
                f"{e.attack:<24}{e.recall:>8.3f}{e.precision:>10.3f}{mark}"
            )
        if any(e.precision_vacuous for e in self.entries):
            lines.append("* no attacked negative crossed the acceptance threshold")
        return "\n".join(lines)


def verifier_fingerprint(agents: AgentPair) -> str:
    """Byte-level digest of the verifier parameters."""
    h = hashlib.sha256()
    for key in sorted(agents.verifier.params):
        h.update(str(key).encode())
        h.update(agents.verifier.params[key].tobytes())
    return h.hexdigest()


def acceptance_for_messages(task, agents: AgentPair, batch: Batch, onehot):
    """Verifier's probability of the defended label for given messages."""
    logits, _, _ = verifier_logits(task, agents, batch, onehot)
    return nn.softmax(logits)[:, 1]


def enumerate_acceptance(task, agents: AgentPair, batch: Batch):
    """Acceptance of every admissible message per example: (n, K) array.

    Forbidden messages carry -1 so they never win an argmax.
    """
    k = task.message_count
    if k > ENUMERATION_CAP:
        raise EnumerationCapError(
            f"{k} messages exceed the enumeration cap {ENUMERATION_CAP}; "
            "use a sampled attack instead"
        )
    n = len(batch)
    legal = task.legal_tokens(batch)
    table = np.full((n, k), -1.0)
    for j in range(k):
        onehot = np.zeros((n, k))
        onehot[:, j] = 1.0
        acc = acceptance_for_messages(task, agents, batch, onehot)
        table[:, j] = np.where(legal[:, j], acc, -1.0)
    return table


def worst_case_messages(task, agents: AgentPair, batch: Batch):
    """Per-example most convincing admissible message, by exhaustion.

    Returns (onehot messages, acceptance probabilities).
    """
    table = enumerate_acceptance(task, agents, batch)
    best = np.argmax(table, axis=1)
    n, k = table.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), best] = 1.0
    return onehot, table[np.arange(n), best]


def continuous_message_ascent(
    task,
    agents: AgentPair,
    batch: Batch,
    steps: int = 150,
    lr: float = 1.0,
    restarts: int = 2,
    rng=None,
):
    """Relaxed-message attack: gradient ascent over coordinate weights.

    Maximizes the verifier's acceptance over the message simplex per
    example, with random restarts plus the exhaustive argmax as one
    start, so it never does worse than enumeration.  Meant for message
    spaces too large to enumerate; on enumerable spaces it additionally
    explores blended (soft) messages.

    Returns (weights, acceptance).
    """
    from .finite import project_to_simplex

    n, k = len(batch), task.message_count
    rng = rng or rngmod.stream(0, rngmod.EVAL)
    legal = task.legal_tokens(batch)

    def project_legal(w):
        out = np.zeros_like(w)
        for i in range(n):
            idx = np.flatnonzero(legal[i])
            out[i, idx] = project_to_simplex(w[i, idx])
        return out

    starts = [project_legal(np.full((n, k), 1.0 / k))]
    try:
        hard, _ = worst_case_messages(task, agents, batch)
        starts.append(hard)
    except EnumerationCapError:
        pass
    for _ in range(restarts):
        starts.append(project_legal(rng.dirichlet(np.ones(k), size=n)))

    best_w = starts[0]
    best_acc = np.full(n, -np.inf)
    for w in starts:
        w = w.copy()
        for _ in range(steps):
            logits, vcache, feats_backward = verifier_logits(task, agents, batch, w)
            probs = nn.softmax(logits)
            dlogits = np.zeros_like(logits)
            dlogits[:, 1] = 1.0
            dacc = nn.softmax_input_grad(probs, dlogits)
            _, dfeats = nn.backward(
                agents.verifier.spec, agents.verifier.params, vcache, dacc
            )
            dw = feats_backward(dfeats)
            w = project_legal(w + lr * dw)
        acc = acceptance_for_messages(task, agents, batch, w)
        better = acc > best_acc
        best_w[better] = w[better]
        best_acc = np.maximum(best_acc, acc)
    return best_w, best_acc


def prover_modal_messages(task, agents: AgentPair, batch: Batch):
    """The prover's highest-probability admissible message per example."""
    logits, _ = agents.prover_logits(batch.inputs)
    masked = task.mask_logits(logits, batch)
    best = np.argmax(masked, axis=1)
    onehot = np.zeros(masked.shape)
    onehot[np.arange(len(batch)), best] = 1.0
    return onehot


def metrics_from_acceptance(attack: str, batch: Batch, acceptance) -> AttackMetrics:
    """Split-pass metrics: recall from positives, precision from negatives."""
    acceptance = np.asarray(acceptance)
    preds = (acceptance > 0.5).astype(int)
    pos = batch.y == 1
    neg = ~pos
    tp = int(preds[pos].sum())
    fn = int(pos.sum() - tp)
    fp = int(preds[neg].sum())
    tn = int(neg.sum() - fp)
    recall = tp / max(tp + fn, 1)
    if fp == 0:
        precision, vacuous = 1.0, True
    else:
        precision, vacuous = tn / (tn + fp), False
    return AttackMetrics(
        attack=attack,
        recall=recall,
        precision=precision,
        precision_vacuous=vacuous,
        counts={"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        mean_acceptance_positives=float(acceptance[pos].mean()) if pos.any() else 0.0,
        mean_acceptance_negatives=float(acceptance[neg].mean()) if neg.any() else 0.0,
    )


def retrain_prover(
    task,
    agents: AgentPair,
    eval_batch: Batch,
    steps: int = 500,
    config: TrainConfig | None = None,
):
    """Train the prover on from its checkpoint against the frozen verifier.

    Returns (attacked agents, AttackMetrics).  The caller's agents and
    in particular the verifier parameters are never touched; a
    fingerprint assertion enforces it.
    """
    cfg = config or TrainConfig()
    before = verifier_fingerprint(agents)
    attacked = agents.copy()
    opt_trunk = nn.OptimState(lr=cfg.prover_lr)
    opt_head = nn.OptimState(lr=cfg.prover_lr)
    data_rng = rngmod.stream(cfg.seed, rngmod.DATA)
    gumbel_rng = rngmod.stream(cfg.seed, rngmod.GUMBEL)
    for _ in range(steps):
        batch = task.sample_batch(cfg.batch_size, data_rng, collaborative=False)
        _prover_update(task, attacked, batch, opt_trunk, opt_head, cfg, gumbel_rng)
    onehot = prover_modal_messages(task, attacked, eval_batch)
    acceptance = acceptance_for_messages(task, attacked, eval_batch, onehot)
    assert verifier_fingerprint(attacked) == before
    assert verifier_fingerprint(agents) == before
    metrics = metrics_from_acceptance("retrained-prover", eval_batch, acceptance)
    return attacked, metrics


def desiderata_check(task, agents: AgentPair, batch: Batch):
    """(perfect_recall_possible, perfect_precision_guaranteed) by exhaustion.

    Recall side: every positive example has some admissible message the
    verifier accepts.  Precision side: no admissible message makes the
    verifier accept any negative example.
    """
    table = enumerate_acceptance(task, agents, batch)
    best = table.max(axis=1)
    pos = batch.y == 1
    recall_possible = bool((best[pos] > 0.5).all()) if pos.any() else True
    precision_guaranteed = bool((best[~pos] <= 0.5).all()) if (~pos).any() else True
    return recall_possible, precision_guaranteed


def stress_test(
    task,
    agents: AgentPair,
    mode: str,
    eval_batch: Batch,
    retrain_steps: int = 500,
    config: TrainConfig | None = None,
) -> StressReport:
    """Run both attacks against the frozen verifier and report."""
    report = StressReport(mode=mode)
    before = verifier_fingerprint(agents)
    _, retrained = retrain_prover(task, agents, eval_batch, retrain_steps, config)
    report.entries.append(retrained)
    _, acceptance = worst_case_messages(task, agents, eval_batch)
    report.entries.append(
        metrics_from_acceptance("worst-case-messages", eval_batch, acceptance)
    )
    assert verifier_fingerprint(agents) == before
    return report
