"""Finite prover-verifier decision problems and their equilibrium checks.

A problem fixes finite input and message sets, a binary label function,
an input distribution, a set of prover policies (mappings input ->
message), and a set of deterministic base verifiers (mappings (input,
message) -> {0, 1}).  The verifier plays convex combinations of the base
verifiers; its mixture output at a pair is read as the probability it
assigns to label 1.  The prover always argues for label 1.

Losses use natural logs internally with a floor clamp at 1e-12; a loss
that hits the floor carries an ``infinite`` flag which dominates every
finite loss in comparisons, so the qualitative comparisons of the
hand-worked instance survive the clamping.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EnumerationCapError, UsageError

LOG_FLOOR = 1e-12
ACCEPT_THRESHOLD = 0.5  # mixture output strictly above this predicts 1


@dataclass(frozen=True)
class GameLoss:
    """A clamped expected log loss with an infinity flag.

    Ordering is lexicographic on (infinite, value): any flagged loss
    exceeds any finite one, and flagged losses compare by their clamped
    values (so a profile losing on one input beats one losing on two).
    """

    value: float
    infinite: bool = False

    def improves_on(self, other: "GameLoss", tol: float = 1e-9) -> bool:
        if self.infinite != other.infinite:
            return other.infinite
        return self.value < other.value - tol

    def key(self):
        return (self.infinite, self.value)

    def in_base(self, base: float) -> float:
        return float("inf") if self.infinite else self.value / np.log(base)


def _neg_log(p: float) -> tuple[float, bool]:
    if p < LOG_FLOOR:
        return -float(np.log(LOG_FLOOR)), True
    return -float(np.log(p)), False


@dataclass(frozen=True)
class FiniteDecisionProblem:
    """Inputs, messages, labels, distribution, and both policy sets."""

    inputs: tuple
    messages: tuple
    labels: tuple  # f(x) in {0,1} per input index
    px: tuple
    policies: tuple  # each: tuple of message indices, one per input
    verifiers: tuple  # each: (n_inputs, n_messages) 0/1 array (as nested tuples)
    policy_names: tuple = ()
    verifier_names: tuple = ()

    def __post_init__(self):
        nx, nm = len(self.inputs), len(self.messages)
        if nx == 0 or nm == 0:
            raise ConfigError("inputs and messages must be non-empty")
        if len(self.labels) != nx or any(l not in (0, 1) for l in self.labels):
            raise ConfigError("labels must be one binary value per input")
        if len(self.px) != nx or abs(sum(self.px) - 1.0) > 1e-9 or min(self.px) < 0:
            raise ConfigError("px must be a distribution over inputs")
        if not self.policies or not self.verifiers:
            raise ConfigError("need at least one policy and one verifier")
        for p in self.policies:
            if len(p) != nx or any(not 0 <= m < nm for m in p):
                raise ConfigError(f"policy {p} is not a mapping inputs->messages")
        for v in self.verifiers:
            arr = np.asarray(v)
            if arr.shape != (nx, nm) or not np.isin(arr, (0, 1)).all():
                raise ConfigError("verifiers must be 0/1 tables of shape (X, M)")
        if self.policy_names and len(self.policy_names) != len(self.policies):
            raise ConfigError("policy_names length mismatch")
        if self.verifier_names and len(self.verifier_names) != len(self.verifiers):
            raise ConfigError("verifier_names length mismatch")

    # ---- cached numeric views -------------------------------------------
    @property
    def v_stack(self) -> np.ndarray:
        """Base verifiers as a (K, X, M) float array."""
        return np.asarray(self.verifiers, dtype=np.float64)

    @property
    def px_arr(self) -> np.ndarray:
        return np.asarray(self.px, dtype=np.float64)

    @property
    def f_arr(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    def policy_acceptance(self, policy_idx: int) -> np.ndarray:
        """A (K, X) matrix: base verifier k's output at (x, policy(x))."""
        p = self.policies[policy_idx]
        v = self.v_stack
        return v[:, np.arange(len(self.inputs)), list(p)]

    def message_images(self) -> list:
        """Per input, the sorted set of messages some policy can send."""
        return [
            sorted({p[xi] for p in self.policies}) for xi in range(len(self.inputs))
        ]

    def constant_closure(self) -> tuple[bool, bool]:
        """Soft check: do the policy/verifier sets contain all constants?"""
        policy_ok = all(
            tuple([m] * len(self.inputs)) in set(self.policies)
            for m in range(len(self.messages))
        )
        consts = {
            tuple(map(tuple, np.full((len(self.inputs), len(self.messages)), c)))
            for c in (0, 1)
        }
        have = {tuple(map(tuple, np.asarray(v))) for v in self.verifiers}
        return policy_ok, consts <= have

    def policy_label(self, idx: int) -> str:
        if self.policy_names:
            return self.policy_names[idx]
        return f"policy{idx}"

    def verifier_label(self, idx: int) -> str:
        if self.verifier_names:
            return self.verifier_names[idx]
        return f"verifier{idx}"


def simplified_erasure_problem() -> FiniteDecisionProblem:
    """The two-input, three-message erasure instance used throughout tests.

    Inputs {0, 1} are uniform and the label equals the input. The prover
    either reveals the bit as its message or always sends the erasure
    message 2 (these are the only mappings compatible with the channel:
    message 1 is unreachable on input 0 and message 0 on input 1, so the
    sole constant mapping available is the all-erasure one).  The three
    base verifiers ignore the input: one accepts exactly message 1, one
    rejects everything, one accepts everything.
    """
    reveal = (0, 1)
    erase = (2, 2)
    accept_token1 = ((0, 1, 0), (0, 1, 0))
    always_reject = ((0, 0, 0), (0, 0, 0))
    always_accept = ((1, 1, 1), (1, 1, 1))
    return FiniteDecisionProblem(
        inputs=(0, 1),
        messages=(0, 1, 2),
        labels=(0, 1),
        px=(0.5, 0.5),
        policies=(reveal, erase),
        verifiers=(accept_token1, always_reject, always_accept),
        policy_names=("reveal-bit", "always-erase"),
        verifier_names=("accept-token-1", "always-reject", "always-accept"),
    )


# ---------------------------------------------------------------------------
# losses and protocol properties


def mixture_map(problem: FiniteDecisionProblem, weights) -> np.ndarray:
    """Acceptance probability at every (x, m) for a verifier mixture."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(problem.verifiers),) or w.min() < -1e-12:
        raise UsageError("weights must be non-negative, one per base verifier")
    if abs(w.sum() - 1.0) > 1e-9:
        raise UsageError("weights must sum to 1")
    return np.tensordot(w, problem.v_stack, axes=1)


def thresholded_predictions(problem, weights, policy) -> np.ndarray:
    t = mixture_map(problem, weights)
    pairs = t[np.arange(len(problem.inputs)), list(policy)]
    return (pairs > ACCEPT_THRESHOLD).astype(int)


def check_completeness(problem, weights) -> tuple[bool, int | None]:
    """True iff some policy makes the thresholded verifier correct everywhere.

    Returns (flag, witness policy index or None).
    """
    for idx in range(len(problem.policies)):
        preds = thresholded_predictions(problem, weights, problem.policies[idx])
        if np.array_equal(preds, problem.f_arr):
            return True, idx
    return False, None


def check_soundness(problem, weights) -> tuple[bool, tuple | None]:
    """True iff no policy makes the verifier accept a label-0 input.

    Returns (flag, counterexample (policy index, input index) or None).
    """
    t = mixture_map(problem, weights)
    for pi, policy in enumerate(problem.policies):
        for xi in range(len(problem.inputs)):
            if problem.labels[xi] == 0 and t[xi, policy[xi]] > ACCEPT_THRESHOLD:
                return False, (pi, xi)
    return True, None


def verifier_loss(problem, policy, weights, lam: float = 0.0) -> GameLoss:
    """Expected (optionally entropy-regularized) log loss of the verifier."""
    t = mixture_map(problem, weights)
    pairs = t[np.arange(len(problem.inputs)), list(policy)]
    total, infinite = 0.0, False
    for xi, px in enumerate(problem.px):
        acc = pairs[xi]
        correct = acc if problem.labels[xi] == 1 else 1.0 - acc
        val, flag = _neg_log(correct)
        total += px * val
        infinite |= flag and px > 0
        if lam > 0.0:
            v1, f1 = _neg_log(acc)
            v0, f0 = _neg_log(1.0 - acc)
            total += px * lam * (v1 + v0)
            infinite |= (f1 or f0) and px > 0
    return GameLoss(total, infinite)


def prover_loss(problem, policy, weights) -> GameLoss:
    """Expected -log of the acceptance probability along the policy."""
    t = mixture_map(problem, weights)
    total, infinite = 0.0, False
    for xi, px in enumerate(problem.px):
        val, flag = _neg_log(t[xi, policy[xi]])
        total += px * val
        infinite |= flag and px > 0
    return GameLoss(total, infinite)


def expected_losses(problem, policy, weights, log_base: float = 2.0):
    """(verifier loss, prover loss) converted to the requested log base."""
    vl = verifier_loss(problem, policy, weights)
    pl = prover_loss(problem, policy, weights)
    return vl.in_base(log_base), pl.in_base(log_base)


# ---------------------------------------------------------------------------
# simplex machinery


def project_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, y.size + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(y - theta, 0.0)


def simplex_grid(k: int, resolution: float = 0.01, cap: int = 2_000_000) -> np.ndarray:
    """All weight vectors with entries on a resolution grid, summing to 1."""
    n = round(1.0 / resolution)
    if abs(n * resolution - 1.0) > 1e-9:
        raise UsageError("resolution must divide 1 exactly")
    from math import comb

    count = comb(n + k - 1, k - 1)
    if count > cap:
        raise EnumerationCapError(
            f"simplex grid would have {count} points (cap {cap})"
        )
    out = np.empty((count, k), dtype=np.float64)
    for i, parts in enumerate(_compositions(n, k)):
        out[i] = parts
    return out / n


def _compositions(n: int, k: int):
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, k - 1):
            yield (first,) + rest


def _verifier_objective(problem, acond, lam):
    """Build value/gradient closures for min_w E[-log correct] + lam * reg.

    ``acond`` is the (K, X) acceptance matrix along the given policy.
    ``values`` evaluates a whole (G, K) stack of mixtures at once.
    """
    px = problem.px_arr
    e1 = (problem.f_arr == 1).astype(np.float64)
    e0 = 1.0 - e1
    tmin = 1e-15

    def value(w):
        t = np.clip(w @ acond, tmin, 1.0 - tmin)
        loss = -(e1 + lam) * np.log(t) - (e0 + lam) * np.log(1.0 - t)
        return float(px @ loss)

    def values(ws):
        t = np.clip(ws @ acond, tmin, 1.0 - tmin)
        loss = -(e1 + lam) * np.log(t) - (e0 + lam) * np.log(1.0 - t)
        return loss @ px

    def grad(w):
        t = np.clip(w @ acond, tmin, 1.0 - tmin)
        dt = px * (-(e1 + lam) / t + (e0 + lam) / (1.0 - t))
        return acond @ dt

    def hess(w):
        t = np.clip(w @ acond, tmin, 1.0 - tmin)
        d2 = px * ((e1 + lam) / t**2 + (e0 + lam) / (1.0 - t) ** 2)
        return (acond * d2) @ acond.T

    return value, values, grad, hess


def _pgd_on_simplex(value, grad, k, max_iter=5000, gap_tol=1e-8):
    """Projected gradient descent with a Frank-Wolfe gap certificate.

    Returns (w, gap, converged).
    """
    w = np.full(k, 1.0 / k)
    step = 1.0
    fw = value(w)
    for _ in range(max_iter):
        g = grad(w)
        gap = float(w @ g - g.min())
        if gap <= gap_tol:
            return w, gap, True
        while step > 1e-18:
            cand = project_to_simplex(w - step * g)
            fc = value(cand)
            if fc <= fw - 1e-12 or np.allclose(cand, w):
                break
            step *= 0.5
        if np.allclose(cand, w) and step <= 1e-18:
            break
        w, fw = cand, fc
        step = min(step * 2.0, 1.0)
    g = grad(w)
    gap = float(w @ g - g.min())
    return w, gap, gap <= gap_tol


def _face_newton_polish(value, grad_fn, hess_fn, w, iters=40):
    """Equality-constrained Newton restricted to the active face.

    Projected gradient descent finds the optimal face quickly but creeps
    along it; a few Newton steps there push the duality gap to roundoff.
    """
    w = w.copy()
    for _ in range(iters):
        support = np.flatnonzero(w > 1e-12)
        if support.size <= 1:
            break
        g = grad_fn(w)
        h = hess_fn(w)
        k = support.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = h[np.ix_(support, support)] + 1e-12 * np.eye(k)
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([-g[support], [0.0]])
        try:
            direction = np.linalg.solve(kkt, rhs)[:k]
        except np.linalg.LinAlgError:
            break
        if np.max(np.abs(direction)) < 1e-16:
            break
        step, base = 1.0, value(w)
        cand = None
        while step > 1e-12:
            trial = w.copy()
            trial[support] = w[support] + step * direction
            if trial[support].min() >= 0.0 and value(trial) <= base + 1e-15:
                cand = trial
                break
            step *= 0.5
        if cand is None:
            break
        cand = np.maximum(cand, 0.0)
        cand /= cand.sum()
        if np.max(np.abs(cand - w)) < 1e-16:
            break
        w = cand
    return w


def verifier_best_response(
    problem,
    policy,
    lam: float = 0.0,
    grid_resolution: float = 0.01,
) -> np.ndarray:
    """Global minimizer of the (smoothed) verifier loss over the simplex.

    A convex descent with a duality-gap certificate does the solving; a
    simplex-grid search cross-checks it.  When the grid attains the
    optimum (ties included), the lexicographically smallest optimal grid
    point is returned, which makes the answer deterministic on the flat
    faces these small games often have.  Results are memoized: problems
    are frozen value types, so (problem, policy, lam) is a stable key.
    """
    if lam < 0:
        raise UsageError("lam must be >= 0")
    w = _best_response_cached(problem, tuple(policy), float(lam), grid_resolution)
    return w.copy()


def _best_response_cached(problem, policy, lam, grid_resolution):
    key = (problem, policy, lam, grid_resolution)
    hit = _BR_CACHE.get(key)
    if hit is not None:
        return hit
    k = len(problem.verifiers)
    xs = np.arange(len(problem.inputs))
    acond = problem.v_stack[:, xs, list(policy)]
    value, values, grad, hess = _verifier_objective(problem, acond, lam)

    w_pgd, gap, converged = _pgd_on_simplex(value, grad, k)
    if not converged:
        w_pgd = _face_newton_polish(value, grad, hess, w_pgd)
        g = grad(w_pgd)
        gap = float(w_pgd @ g - g.min())
        converged = gap <= 1e-8
    grid = simplex_grid(k, grid_resolution)
    grid_losses = values(grid)
    gi = int(np.argmin(grid_losses))
    if not converged:
        warnings.warn(
            f"verifier best response: descent stalled at duality gap {gap:.2e}; "
            "falling back to the grid optimum"
        )
        result = grid[gi]
    else:
        # cross-check: grid can never beat the certified optimum materially
        pgd_val = value(w_pgd)
        if grid_losses[gi] <= pgd_val + 1e-12:
            near = grid[grid_losses <= grid_losses[gi] + 1e-9]
            result = near[np.lexsort(near.T[::-1])][0]
        else:
            result = w_pgd
    if len(_BR_CACHE) > 4096:
        _BR_CACHE.clear()
    _BR_CACHE[key] = result
    return result


_BR_CACHE: dict = {}


def prover_best_response(problem, weights) -> int:
    """Index of the loss-minimizing policy, ties broken by listed order."""
    best_idx, best = None, None
    for idx in range(len(problem.policies)):
        loss = prover_loss(problem, problem.policies[idx], weights)
        if best is None or loss.key() < best.key():
            best_idx, best = idx, loss
    return best_idx


# ---------------------------------------------------------------------------
# equilibrium predicates (global-strategy orderings)


def is_nash(
    problem,
    policy_idx: int,
    weights,
    tolerance: float = 1e-9,
    lam: float = 0.0,
) -> bool:
    """No unilateral deviation strictly improves either player."""
    policy = problem.policies[policy_idx]
    current_prover = prover_loss(problem, policy, weights)
    for idx in range(len(problem.policies)):
        if idx == policy_idx:
            continue
        alt = prover_loss(problem, problem.policies[idx], weights)
        if alt.improves_on(current_prover, tolerance):
            return False
    current_verifier = verifier_loss(problem, policy, weights, lam)
    w_br = verifier_best_response(problem, policy, lam)
    if verifier_loss(problem, policy, w_br, lam).improves_on(
        current_verifier, tolerance
    ):
        return False
    return True


def _leader_value_verifier(problem, weights, lam=0.0) -> GameLoss:
    """Verifier's loss when the prover best-responds to its commitment."""
    follower = prover_best_response(problem, weights)
    return verifier_loss(problem, problem.policies[follower], weights, lam)


def _min_leader_value_verifier(
    problem, lam=0.0, grid_resolution=0.01
) -> GameLoss:
    """Global minimum of the verifier-leading objective: grid + refinement.

    The leader objective is piecewise convex (pieces indexed by the
    follower's response), so the grid scan is polished per piece with the
    convex solver, kept when the response stays consistent.
    """
    grid = simplex_grid(len(problem.verifiers), grid_resolution)
    xs = np.arange(len(problem.inputs))
    px = problem.px_arr
    f = problem.f_arr
    BIG = 1e9
    t_pol = np.stack(
        [grid @ problem.v_stack[:, xs, list(p)] for p in problem.policies]
    )  # (P, G, X)
    pl_key = np.einsum("x,pgx->pg", px, -np.log(np.maximum(t_pol, LOG_FLOOR)))
    pl_key += BIG * ((t_pol < LOG_FLOOR) & (px > 0)).any(axis=2)
    followers = np.argmin(pl_key, axis=0)
    correct = np.where(f == 1, t_pol, 1.0 - t_pol)
    vl_val = np.einsum("x,pgx->pg", px, -np.log(np.maximum(correct, LOG_FLOOR)))
    if lam > 0.0:
        reg = -np.log(np.maximum(t_pol, LOG_FLOOR)) - np.log(
            np.maximum(1.0 - t_pol, LOG_FLOOR)
        )
        vl_val = vl_val + lam * np.einsum("x,pgx->pg", px, reg)
    vl_inf = ((correct < LOG_FLOOR) & (px > 0)).any(axis=2)
    leader = vl_val[followers, np.arange(len(grid))] + BIG * vl_inf[
        followers, np.arange(len(grid))
    ]
    j = int(np.argmin(leader))
    best = verifier_loss(problem, problem.policies[followers[j]], grid[j], lam)
    for idx in range(len(problem.policies)):
        w_star = verifier_best_response(problem, problem.policies[idx], lam)
        if prover_best_response(problem, w_star) == idx:
            val = verifier_loss(problem, problem.policies[idx], w_star, lam)
            if val.key() < best.key():
                best = val
    return best


def is_stackelberg(
    problem,
    policy_idx: int,
    weights,
    leader: str,
    tolerance: float = 1e-6,
    lam: float = 0.0,
    grid_resolution: float = 0.01,
) -> bool:
    """Follower exactly optimal; leader optimal over its strategy space.

    Prover-leading games compare the prover's value under each possible
    commitment with the verifier best-responding (that value is
    well-defined: the optimal acceptance probabilities along the played
    policy are unique even when the optimal mixture is not).  Verifier-
    leading games scan a simplex grid plus per-policy convex refinement.
    """
    if leader not in ("prover", "verifier"):
        raise UsageError("leader must be 'prover' or 'verifier'")
    policy = problem.policies[policy_idx]

    if leader == "prover":
        current_v = verifier_loss(problem, policy, weights, lam)
        best_v = verifier_loss(
            problem, policy, verifier_best_response(problem, policy, lam), lam
        )
        if best_v.improves_on(current_v, tolerance):
            return False  # follower not optimal
        current_value = prover_loss(problem, policy, weights)
        for idx in range(len(problem.policies)):
            if idx == policy_idx:
                continue
            w_resp = verifier_best_response(problem, problem.policies[idx], lam)
            alt = prover_loss(problem, problem.policies[idx], w_resp)
            if alt.improves_on(current_value, tolerance):
                return False
        return True

    # verifier leading
    current_p = prover_loss(problem, policy, weights)
    br_idx = prover_best_response(problem, weights)
    best_p = prover_loss(problem, problem.policies[br_idx], weights)
    if best_p.improves_on(current_p, tolerance):
        return False
    current_value = verifier_loss(problem, policy, weights, lam)
    minimum = _min_leader_value_verifier(problem, lam, grid_resolution)
    return not minimum.improves_on(current_value, tolerance)


# ---------------------------------------------------------------------------
# random problems with the structural guarantees of the setting


def random_problem(
    rng: np.random.Generator,
    max_inputs: int = 3,
    max_messages: int = 4,
    max_verifiers: int = 4,
) -> FiniteDecisionProblem:
    """Sample a small problem with all constant mappings present and at
    least one deterministic complete-and-sound verifier (constructed
    directly: it ignores messages on label-0 inputs and accepts a
    nonempty message set on label-1 inputs, with a witness policy added
    to the prover set)."""
    nx = int(rng.integers(1, max_inputs + 1))
    nm = int(rng.integers(1, max_messages + 1))
    labels = tuple(int(v) for v in rng.integers(0, 2, size=nx))
    px = rng.dirichlet(np.ones(nx))
    px = tuple(float(p) for p in px / px.sum())

    vstar = np.zeros((nx, nm), dtype=int)
    witness = []
    for xi in range(nx):
        if labels[xi] == 1:
            accepted = rng.random(nm) < 0.5
            if not accepted.any():
                accepted[rng.integers(0, nm)] = True
            vstar[xi] = accepted.astype(int)
            witness.append(int(np.flatnonzero(accepted)[0]))
        else:
            witness.append(int(rng.integers(0, nm)))

    policies = {tuple([m] * nx) for m in range(nm)}
    policies.add(tuple(witness))
    for _ in range(2):
        policies.add(tuple(int(m) for m in rng.integers(0, nm, size=nx)))

    verifiers = [tuple(map(tuple, vstar))]
    verifiers.append(tuple(map(tuple, np.zeros((nx, nm), dtype=int))))
    verifiers.append(tuple(map(tuple, np.ones((nx, nm), dtype=int))))
    extra = tuple(map(tuple, rng.integers(0, 2, size=(nx, nm))))
    if extra not in verifiers and len(verifiers) < max_verifiers:
        verifiers.append(extra)

    return FiniteDecisionProblem(
        inputs=tuple(range(nx)),
        messages=tuple(range(nm)),
        labels=labels,
        px=px,
        policies=tuple(sorted(policies)),
        verifiers=tuple(verifiers),
    )
