"""Alternating prover-verifier training.

The verifier minimizes the smoothed cross entropy of the true labels
given the prover's sampled messages; the prover minimizes the negative
log probability the verifier assigns to its defended label.  Updates
alternate: several verifier steps per round, then one or more prover
steps, with the prover step count optionally raised on a sustained
accuracy streak.  Messages are discrete straight-through samples, so the
prover's gradient flows through the relaxed sample while the verifier
always sees exact one-hot tokens.
"""

from dataclasses import dataclass

import numpy as np

from . import nnkit as nn
from . import rng as rngmod
from .errors import ConfigError, NumericError
from .tasks import AgentPair, Batch, Network

LOG_FLOOR = 1e-12
CLAMP = -float(np.log(LOG_FLOOR))


@dataclass(frozen=True)
class TrainConfig:
    prover_lr: float = 3e-4
    verifier_lr: float = 3e-4
    batch_size: int = 2000
    verifier_steps: int = 5
    max_steps: int = 2000
    label_smoothing: float = 0.05
    temperature: float = 1.0
    collaborative: bool = False
    adaptive: bool = True
    accuracy_threshold: float = 0.75
    streak_length: int = 20
    max_prover_steps: int = 15
    snapshot_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.prover_lr < 0 or self.verifier_lr < 0:
            raise ConfigError("learning rates must be >= 0")
        if not 0.0 < self.accuracy_threshold < 1.0:
            raise ConfigError("accuracy threshold must be in (0, 1)")
        if self.streak_length < 1:
            raise ConfigError("streak length must be >= 1")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ConfigError("batch size and step counts must be sensible")


@dataclass
class ScheduleState:
    prover_steps: int = 1
    streak: int = 0


def adaptive_schedule_update(
    state: ScheduleState, verifier_accuracy: float, config: TrainConfig
) -> ScheduleState:
    """Raise the prover step count after a sustained accuracy streak.

    The streak counter resets on any step below threshold, and again
    after an increment so each raise requires a fresh streak; the count
    never exceeds the configured maximum.
    """
    if not 0.0 <= verifier_accuracy <= 1.0:
        raise ConfigError("accuracy must be in [0, 1]")
    if not config.adaptive:
        return state
    if verifier_accuracy < config.accuracy_threshold:
        return ScheduleState(prover_steps=state.prover_steps, streak=0)
    streak = state.streak + 1
    if streak >= config.streak_length and state.prover_steps < config.max_prover_steps:
        return ScheduleState(prover_steps=state.prover_steps + 1, streak=0)
    return ScheduleState(prover_steps=state.prover_steps, streak=streak)


class TrainingDiverged(NumericError):
    def __init__(self, step, agents):
        super().__init__(f"training diverged at game step {step}", where=step)
        self.step = step
        self.agents = agents


def sample_messages(task, agents: AgentPair, batch: Batch, rng, temperature):
    logits, cache = agents.prover_logits(batch.inputs)
    masked = task.mask_logits(logits, batch)
    soft, hard = nn.gumbel_softmax_st(masked, temperature, rng)
    return soft, hard, cache


def verifier_logits(task, agents: AgentPair, batch: Batch, hard):
    feats, feats_backward = task.verifier_features(batch, hard)
    logits, vcache = agents.verifier.forward(feats)
    return logits, vcache, feats_backward


def verifier_loss(task, agents, batch, rng, smoothing=0.0, temperature=1.0) -> float:
    """Mean smoothed negative log-likelihood of the true labels."""
    _, hard, _ = sample_messages(task, agents, batch, rng, temperature)
    logits, _, _ = verifier_logits(task, agents, batch, hard)
    targets = nn.smoothed_targets(batch.y, logits.shape[1], smoothing)
    per_example = -(targets * nn.log_softmax(logits)).sum(axis=1)
    bad = ~np.isfinite(per_example)
    if bad.any():
        raise NumericError(
            f"non-finite verifier loss at batch index {int(np.flatnonzero(bad)[0])}",
            where=int(np.flatnonzero(bad)[0]),
        )
    return float(per_example.mean())


def prover_loss(task, agents, batch, rng, temperature=1.0):
    """Mean -log p(defended label); floor-clamped with a flag.

    Returns (loss, clamped_fraction).
    """
    _, hard, _ = sample_messages(task, agents, batch, rng, temperature)
    logits, _, _ = verifier_logits(task, agents, batch, hard)
    logp = nn.log_softmax(logits)[np.arange(len(batch)), batch.y_prime]
    clamped = logp < np.log(LOG_FLOOR)
    values = np.where(clamped, CLAMP, -logp)
    return float(values.mean()), float(clamped.mean())


def accuracy(task, agents, batch, rng, temperature=1.0) -> float:
    _, hard, _ = sample_messages(task, agents, batch, rng, temperature)
    logits, _, _ = verifier_logits(task, agents, batch, hard)
    return float((np.argmax(logits, axis=1) == batch.y).mean())


def _verifier_update(task, agents, batch, opt, cfg, rng):
    _, hard, _ = sample_messages(task, agents, batch, rng, cfg.temperature)
    logits, vcache, _ = verifier_logits(task, agents, batch, hard)
    loss, dlogits = nn.cross_entropy_smoothed_grad(
        logits, batch.y, cfg.label_smoothing
    )
    grads, _ = nn.backward(
        agents.verifier.spec, agents.verifier.params, vcache, dlogits
    )
    agents.verifier.params = nn.optim_step(agents.verifier.params, grads, opt)
    return loss


def _prover_update(task, agents, batch, opt_trunk, opt_head, cfg, rng):
    soft, hard, pcache = sample_messages(task, agents, batch, rng, cfg.temperature)
    logits, vcache, feats_backward = verifier_logits(task, agents, batch, hard)
    loss, dlogits = nn.cross_entropy_smoothed_grad(logits, batch.y_prime, 0.0)
    _, dfeats = nn.backward(
        agents.verifier.spec, agents.verifier.params, vcache, dlogits
    )
    donehot = feats_backward(dfeats)
    dlogits_prover = nn.gumbel_softmax_st_backward(soft, cfg.temperature, donehot)
    trunk_grads, head_grads = agents.prover_backward(pcache, dlogits_prover)
    agents.prover_trunk.params = nn.optim_step(
        agents.prover_trunk.params, trunk_grads, opt_trunk
    )
    agents.prover_head.params = nn.optim_step(
        agents.prover_head.params, head_grads, opt_head
    )
    return loss


@dataclass
class TrainResult:
    rows: list
    agents: AgentPair
    steps_done: int
    stopped_reason: str


def alternating_train(task, agents: AgentPair, config: TrainConfig, on_step=None):
    """Run the alternating game for up to ``config.max_steps`` rounds.

    ``on_step`` receives each metrics row and may return True to stop
    early.  Identical seeds and configs reproduce trajectories exactly.
    Divergence aborts with the step index and the last healthy agents.
    """
    data_rng = rngmod.stream(config.seed, rngmod.DATA)
    gumbel_rng = rngmod.stream(config.seed, rngmod.GUMBEL)
    eval_rng = rngmod.stream(config.seed, rngmod.EVAL)

    opt_v = nn.OptimState(lr=config.verifier_lr)
    opt_trunk = nn.OptimState(lr=config.prover_lr)
    opt_head = nn.OptimState(lr=config.prover_lr)
    schedule = ScheduleState()
    rows = []
    reason = "max_steps"

    for step in range(1, config.max_steps + 1):
        last_good = agents.copy()
        try:
            v_losses = []
            for _ in range(config.verifier_steps):
                batch = task.sample_batch(
                    config.batch_size, data_rng, config.collaborative
                )
                v_losses.append(
                    _verifier_update(task, agents, batch, opt_v, config, gumbel_rng)
                )
            p_losses = []
            for _ in range(schedule.prover_steps):
                batch = task.sample_batch(
                    config.batch_size, data_rng, config.collaborative
                )
                p_losses.append(
                    _prover_update(
                        task, agents, batch, opt_trunk, opt_head, config, gumbel_rng
                    )
                )
            eval_batch = task.sample_batch(
                config.batch_size, data_rng, config.collaborative
            )
            acc = accuracy(task, agents, eval_batch, eval_rng, config.temperature)
            ploss, clamped = prover_loss(
                task, agents, eval_batch, eval_rng, config.temperature
            )
        except NumericError as err:
            raise TrainingDiverged(step, last_good) from err

        row = {
            "step": step,
            "verifier_loss": float(np.mean(v_losses)) if v_losses else None,
            "prover_loss": ploss,
            "prover_loss_clamped_fraction": clamped,
            "accuracy": acc,
            "prover_steps": schedule.prover_steps,
            "streak": schedule.streak,
            "snapshot": None,
        }
        if config.snapshot_every and step % config.snapshot_every == 0:
            row["snapshot"] = task.probe_logits(agents)
        schedule = adaptive_schedule_update(schedule, acc, config)
        rows.append(row)
        if on_step is not None and on_step(row):
            reason = "stopped"
            break

    return TrainResult(
        rows=rows, agents=agents, steps_done=len(rows), stopped_reason=reason
    )


@dataclass
class PretrainResult:
    class_accuracy: float
    recon_curve: list


def pretrain_prover(task, agents: AgentPair, steps: int, config: TrainConfig):
    """Train the prover trunk on classification plus input reconstruction.

    Two temporary heads (a classifier and an input decoder) attach to the
    trunk and learn jointly with it; the message head is not touched.
    """
    if steps < 0:
        raise ConfigError("steps must be >= 0")
    width = agents.prover_trunk.spec.out_dim
    input_dim = agents.prover_trunk.spec.in_dim
    init_rng = rngmod.stream(config.seed, rngmod.INIT)
    cls_spec = nn.NetworkSpec((nn.Linear(width, 2),))
    rec_spec = nn.NetworkSpec((nn.Linear(width, input_dim),))
    cls = Network(cls_spec, nn.init_params(cls_spec, init_rng))
    rec = Network(rec_spec, nn.init_params(rec_spec, init_rng))

    opt_trunk = nn.OptimState(lr=config.prover_lr)
    opt_cls = nn.OptimState(lr=config.prover_lr)
    opt_rec = nn.OptimState(lr=config.prover_lr)
    data_rng = rngmod.stream(config.seed, rngmod.DATA)
    curve = []
    acc = 0.0
    for _ in range(steps):
        batch = task.sample_batch(config.batch_size, data_rng, config.collaborative)
        hidden, trunk_cache = agents.prover_trunk.forward(batch.inputs)
        cls_logits, cls_cache = cls.forward(hidden)
        recon, rec_cache = rec.forward(hidden)

        _, dcls = nn.cross_entropy_smoothed_grad(cls_logits, batch.y, 0.0)
        diff = recon - batch.inputs
        recon_loss = float((diff**2).mean())
        drecon = 2.0 * diff / diff.size

        cls_grads, dhidden_cls = nn.backward(cls.spec, cls.params, cls_cache, dcls)
        rec_grads, dhidden_rec = nn.backward(rec.spec, rec.params, rec_cache, drecon)
        trunk_grads, _ = nn.backward(
            agents.prover_trunk.spec,
            agents.prover_trunk.params,
            trunk_cache,
            dhidden_cls + dhidden_rec,
        )
        cls.params = nn.optim_step(cls.params, cls_grads, opt_cls)
        rec.params = nn.optim_step(rec.params, rec_grads, opt_rec)
        agents.prover_trunk.params = nn.optim_step(
            agents.prover_trunk.params, trunk_grads, opt_trunk
        )
        acc = float((np.argmax(cls_logits, axis=1) == batch.y).mean())
        curve.append(recon_loss)
    return PretrainResult(class_accuracy=acc, recon_curve=curve)
