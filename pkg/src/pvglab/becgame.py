"""Closed-form analysis of the reduced binary erasure-channel game.

The prover keeps two probabilities: ``a`` for sending the informative
token on input 1 and ``b`` for sending it on input 0; every remaining
token is merged into a single uninformative erasure token (they are
interchangeable for both players, so the merge is lossless).  The
verifier's entropy-regularized best response and the prover's gradients
have closed forms, which lets gradient-descent dynamics be simulated
exactly for the simultaneous game (verifier re-solved every step, the
limit of a much faster verifier timescale) and the prover-leading game
(prover differentiates through the verifier's response).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class ReducedBEC:
    """Prover parameters (a, b) and smoothing coefficient lam."""

    a: float
    b: float
    lam: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.a <= 1.0 and 0.0 <= self.b <= 1.0):
            raise ConfigError(f"a, b must lie in [0, 1]: got ({self.a}, {self.b})")
        if self.lam < 0.0:
            raise ConfigError("lam must be >= 0")


@dataclass(frozen=True)
class QTriple:
    """Verifier acceptance probabilities on tokens 0, 1, and erasure."""

    q0: float
    q1: float
    q2: float

    def as_tuple(self):
        return (self.q0, self.q1, self.q2)


def _check_channel(model: ReducedBEC):
    if model.a + model.b >= 2.0 - 1e-12:
        raise ConfigError(
            "degenerate channel: a + b = 2 leaves no mass on the erasure token"
        )


def optimal_q(model: ReducedBEC) -> QTriple:
    """Verifier's smoothed best response given the prover's (a, b).

    Each token's acceptance is the smoothed conditional
    (label-1 mass + lam * total mass) / (total mass * (1 + 2 lam)).
    """
    _check_channel(model)
    a, b, lam = model.a, model.b, model.lam
    q1 = (1.0 + lam) / (1.0 + 2.0 * lam)
    q0 = lam / (1.0 + 2.0 * lam)
    q2 = (1.0 - a + lam * (2.0 - a - b)) / ((2.0 - a - b) * (1.0 + 2.0 * lam))
    return QTriple(q0=q0, q1=q1, q2=q2)


def prover_objective(model: ReducedBEC, q: QTriple | None = None) -> float:
    """-a log q1 - b log q0 - (2-a-b) log q2, natural log, floor-clamped."""
    if q is None:
        q = optimal_q(model)
    vals = np.maximum(np.array(q.as_tuple()), LOG_FLOOR)
    logs = np.log(vals)
    return float(
        -model.a * logs[1] - model.b * logs[0] - (2.0 - model.a - model.b) * logs[2]
    )


def objective_clamped(model: ReducedBEC, q: QTriple) -> tuple[float, bool]:
    """Objective value plus a flag marking that a log hit the clamp floor."""
    weights = (model.b, model.a, 2.0 - model.a - model.b)
    clamped = any(
        qi < LOG_FLOOR and w > 0 for qi, w in zip(q.as_tuple(), weights)
    )
    return prover_objective(model, q), clamped


def sim_grads(model: ReducedBEC) -> tuple[float, float]:
    """Prover gradients in the simultaneous game (verifier already optimal).

    dL/da = log q2 - log q1 = -log(1 + (1-b)/D)
    dL/db = log q2 - log q0 = -log(1 - (1-a)/D)
    with D = 1 - a + lam (2 - a - b).
    """
    _check_channel(model)
    if model.lam <= 0.0:
        raise UsageError("gradients need lam > 0")
    a, b, lam = model.a, model.b, model.lam
    d = 1.0 - a + lam * (2.0 - a - b)
    da = -np.log1p((1.0 - b) / d)
    db = -np.log1p(-(1.0 - a) / d)
    return float(da), float(db)


def stackelberg_grads(model: ReducedBEC) -> tuple[float, float]:
    """Total-derivative prover gradients when the prover leads.

    The extra terms +(1-b)/D and -(1-a)/D come from differentiating the
    verifier's response along with the objective; both components are
    strictly positive on the interior, so descent drives (a, b) to zero.
    """
    da, db = sim_grads(model)
    a, b, lam = model.a, model.b, model.lam
    d = 1.0 - a + lam * (2.0 - a - b)
    return float(da + (1.0 - b) / d), float(db - (1.0 - a) / d)


@dataclass
class SimResult:
    mode: str
    trajectory: list  # rows: (step, a, b, q0, q1, q2, objective)
    final: ReducedBEC
    final_q: QTriple
    converged: bool
    steps_taken: int

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "a", "b", "q0", "q1", "q2", "objective"])
            writer.writerows(self.trajectory)


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def simulate(
    mode: str,
    init: ReducedBEC,
    lr: float = 0.05,
    steps: int = 100_000,
    tol: float = 1e-6,
    verifier_ratio: int = 10,
    verifier_lr: float | None = None,
) -> SimResult:
    """Projected gradient descent on (a, b) in [0, 1]^2.

    Modes:
      simultaneous   - verifier re-solved in closed form before every
                       prover step (fast-verifier limit).
      prover_leading - prover descends the total derivative through the
                       verifier's response.
      two_timescale  - finite-ratio variant: the erasure acceptance is a
                       sigmoid-parametrized scalar updated
                       ``verifier_ratio`` gradient steps per prover step.
    """
    if mode not in ("simultaneous", "prover_leading", "two_timescale"):
        raise UsageError(f"unknown mode {mode!r}")
    if lr <= 0:
        raise UsageError("lr must be > 0")
    if steps < 0:
        raise UsageError("steps must be >= 0")

    a, b, lam = init.a, init.b, init.lam
    v_lr = lr if verifier_lr is None else verifier_lr
    # two-timescale state: logit of the erasure-token acceptance
    u2 = 0.0

    def q_now(model: ReducedBEC) -> QTriple:
        if mode != "two_timescale":
            return optimal_q(model)
        exact = optimal_q(model)
        return QTriple(q0=exact.q0, q1=exact.q1, q2=1.0 / (1.0 + np.exp(-u2)))

    trajectory = []
    converged = False
    step = 0
    model = ReducedBEC(a, b, lam)
    q = q_now(model)
    trajectory.append((0, a, b, q.q0, q.q1, q.q2, prover_objective(model, q)))

    for step in range(1, steps + 1):
        model = ReducedBEC(a, b, lam)
        if mode == "prover_leading":
            da, db = stackelberg_grads(model)
        elif mode == "simultaneous":
            da, db = sim_grads(model)
        else:
            q = q_now(model)
            # partial derivatives at the verifier's current q
            logs = np.log(np.maximum(np.array(q.as_tuple()), LOG_FLOOR))
            da, db = float(logs[2] - logs[1]), float(logs[2] - logs[0])
            # verifier ascent on its own smoothed objective for q2
            for _ in range(verifier_ratio):
                mass1 = (1.0 - a) / 2.0
                mass0 = (1.0 - b) / 2.0
                q2 = 1.0 / (1.0 + np.exp(-u2))
                grad_u2 = (
                    (mass1 + lam * (mass1 + mass0)) * (1.0 - q2)
                    - (mass0 + lam * (mass1 + mass0)) * q2
                )
                u2 += v_lr * grad_u2

        new_a = _clip01(a - lr * da)
        new_b = _clip01(b - lr * db)
        delta = max(abs(new_a - a), abs(new_b - b))
        a, b = new_a, new_b
        model = ReducedBEC(a, b, lam)
        q = q_now(model)
        trajectory.append((step, a, b, q.q0, q.q1, q.q2, prover_objective(model, q)))
        if delta <= tol:
            converged = True
            break

    return SimResult(
        mode=mode,
        trajectory=trajectory,
        final=ReducedBEC(a, b, lam),
        final_q=q,
        converged=converged,
        steps_taken=step if steps > 0 else 0,
    )


def verifier_loss_on_grid(model: ReducedBEC, resolution: float = 1e-3):
    """Brute-force minimizer of the smoothed verifier loss per token.

    Used as an independent cross-check of optimal_q: the loss separates
    over tokens, so each acceptance probability is scanned on its own
    1-d grid.
    """
    _check_channel(model)
    a, b, lam = model.a, model.b, model.lam
    # (label-1 mass, label-0 mass) reaching each token; inputs uniform
    masses = {
        "q0": (0.0, b / 2.0),
        "q1": (a / 2.0, 0.0),
        "q2": ((1.0 - a) / 2.0, (1.0 - b) / 2.0),
    }
    grid = np.arange(resolution, 1.0, resolution)
    best = {}
    for name, (m1, m0) in masses.items():
        total = m1 + m0
        losses = -(m1 + lam * total) * np.log(grid) - (m0 + lam * total) * np.log(
            1.0 - grid
        )
        best[name] = float(grid[np.argmin(losses)])
    return QTriple(q0=best["q0"], q1=best["q1"], q2=best["q2"])
