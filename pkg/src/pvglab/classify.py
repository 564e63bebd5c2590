"""Equilibrium classification of finite prover-verifier games across the
eight move/reveal orderings.

Each ordering fixes (a) the equilibrium concept: simultaneous play gives
Nash, sequential play gives leader-follower optimality with the leader
anticipating the follower's response, and (b) which players choose their
strategy after the problem instance is revealed; those players pick a
separate action per instance.  A prover moving post-reveal still acts
through its policy class: at input x it can send exactly the messages
some admissible policy sends there.

The classifier enumerates candidate profiles (policies x a simplex grid
of verifier mixtures, or per-instance actions when revealed first),
flags equilibria, and renders two verdicts with concrete witnesses:

* sufficiency - every equilibrium found is a complete-and-sound
  protocol (thresholded at 0.5, with the profile's own prover as the
  completeness witness);
* necessity - every exactly-representing complete-and-sound protocol
  (acceptance exactly matching the label along its own policy, the
  loss-0 notion the sequential-game arguments rely on) is an
  equilibrium.

Orderings that reveal the instance before the verifier moves admit
equilibria in which the verifier simply outputs the revealed label,
ignoring messages.  Such per-instance strategy families are not
expressible as any single verifier mixture, so they are not protocols
at all; their existence is what makes converging to an equilibrium
uninformative in these formulations, and the classifier accordingly
reports both verdicts false with the trivial family as witness.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from itertools import product

import numpy as np

from .errors import EnumerationCapError
from .finite import (
    ACCEPT_THRESHOLD,
    LOG_FLOOR,
    FiniteDecisionProblem,
    GameLoss,
    check_completeness,
    check_soundness,
    mixture_map,
    prover_best_response,
    prover_loss,
    simplex_grid,
    verifier_best_response,
    verifier_loss,
    _verifier_objective,
    _pgd_on_simplex,
)

EXACT_TOL = 1e-9


class GameOrdering(Enum):
    """The eight orderings of strategy picks and instance reveal."""

    PROVER_VERIFIER_THEN_INSTANCE = "{prover,verifier}, instance"
    INSTANCE_THEN_PROVER_VERIFIER = "instance, {prover,verifier}"
    VERIFIER_PROVER_INSTANCE = "verifier, prover, instance"
    VERIFIER_INSTANCE_PROVER = "verifier, instance, prover"
    INSTANCE_VERIFIER_PROVER = "instance, verifier, prover"
    PROVER_VERIFIER_INSTANCE = "prover, verifier, instance"
    PROVER_INSTANCE_VERIFIER = "prover, instance, verifier"
    INSTANCE_PROVER_VERIFIER = "instance, prover, verifier"

    @property
    def concept(self) -> str:
        if self in (
            GameOrdering.PROVER_VERIFIER_THEN_INSTANCE,
            GameOrdering.INSTANCE_THEN_PROVER_VERIFIER,
        ):
            return "nash"
        if self in (
            GameOrdering.VERIFIER_PROVER_INSTANCE,
            GameOrdering.VERIFIER_INSTANCE_PROVER,
            GameOrdering.INSTANCE_VERIFIER_PROVER,
        ):
            return "verifier-leading"
        return "prover-leading"

    @property
    def verifier_post_reveal(self) -> bool:
        return self in (
            GameOrdering.INSTANCE_THEN_PROVER_VERIFIER,
            GameOrdering.INSTANCE_VERIFIER_PROVER,
            GameOrdering.PROVER_INSTANCE_VERIFIER,
            GameOrdering.INSTANCE_PROVER_VERIFIER,
        )

    @property
    def prover_post_reveal(self) -> bool:
        return self in (
            GameOrdering.INSTANCE_THEN_PROVER_VERIFIER,
            GameOrdering.VERIFIER_INSTANCE_PROVER,
            GameOrdering.INSTANCE_VERIFIER_PROVER,
            GameOrdering.INSTANCE_PROVER_VERIFIER,
        )


@dataclass
class EquilibriumReport:
    ordering: str
    concept: str
    necessity: bool
    sufficiency: bool
    failure_mode: str
    equilibria: list = field(default_factory=list)
    equilibria_count: int = 0
    necessity_witness: dict | None = None
    sufficiency_witness: dict | None = None
    notes: str = ""

    def to_json_dict(self) -> dict:
        return {
            "ordering": self.ordering,
            "concept": self.concept,
            "necessity": self.necessity,
            "sufficiency": self.sufficiency,
            "failure_mode": self.failure_mode,
            "equilibria_count": self.equilibria_count,
            "equilibria": self.equilibria,
            "necessity_witness": self.necessity_witness,
            "sufficiency_witness": self.sufficiency_witness,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


# ---------------------------------------------------------------------------
# shared candidate bookkeeping


def _profile_flags(problem, weights, own_messages):
    """(complete-with-own-messages, sound, exact) for a candidate profile."""
    t = mixture_map(problem, weights)
    xs = np.arange(len(problem.inputs))
    own = t[xs, list(own_messages)]
    preds = (own > ACCEPT_THRESHOLD).astype(int)
    complete = bool(np.array_equal(preds, problem.f_arr))
    sound, _ = check_soundness(problem, weights)
    exact = bool(np.max(np.abs(own - problem.f_arr)) <= EXACT_TOL)
    return complete, sound, exact


def _clamped_expected(px, probs):
    """GameLoss of sum_x px * (-log probs_x), vectorized."""
    probs = np.asarray(probs, dtype=np.float64)
    clipped = np.maximum(probs, LOG_FLOOR)
    value = float(np.dot(px, -np.log(clipped)))
    infinite = bool(np.any((probs < LOG_FLOOR) & (np.asarray(px) > 0)))
    return GameLoss(value, infinite)


def _profile_dict(problem, policy_idx, weights, flags, extra=None):
    complete, sound, exact = flags
    d = {
        "prover": problem.policy_label(policy_idx) if policy_idx is not None else None,
        "verifier_weights": [round(float(w), 10) for w in np.atleast_1d(weights)],
        "complete": complete,
        "sound": sound,
        "exact_protocol": exact,
    }
    if extra:
        d.update(extra)
    return d


# ---------------------------------------------------------------------------
# orderings where the verifier commits before the instance is revealed


def _classify_global(problem, ordering, grid_resolution, tolerance, max_listed):
    nx = len(problem.inputs)
    xs = np.arange(nx)
    px = problem.px_arr
    f = problem.f_arr
    grid = simplex_grid(len(problem.verifiers), grid_resolution)
    g = grid.shape[0]
    n_pol = len(problem.policies)
    v = problem.v_stack

    # acceptance along each policy for every grid mixture: (n_pol, G, X)
    t_pol = np.stack(
        [grid @ v[:, xs, list(p)] for p in problem.policies], axis=0
    )
    correct = np.where(f == 1, t_pol, 1.0 - t_pol)
    # prover loss value/flag per (policy, grid)
    pl_val = np.einsum("x,pgx->pg", px, -np.log(np.maximum(t_pol, LOG_FLOOR)))
    pl_inf = ((t_pol < LOG_FLOOR) & (px > 0)).any(axis=2)
    vl_val = np.einsum("x,pgx->pg", px, -np.log(np.maximum(correct, LOG_FLOOR)))
    vl_inf = ((correct < LOG_FLOOR) & (px > 0)).any(axis=2)
    BIG = 1e9
    pl_key = pl_val + BIG * pl_inf
    vl_key = vl_val + BIG * vl_inf

    def loss_key(gl: GameLoss) -> float:
        return gl.key()[1] + BIG * gl.infinite

    br_weights = [verifier_best_response(problem, p) for p in problem.policies]
    br_vloss = np.array(
        [
            loss_key(verifier_loss(problem, problem.policies[i], br_weights[i]))
            for i in range(n_pol)
        ]
    )

    def grid_profile_equilibrium_mask():
        """(n_pol, G) booleans for the ordering's equilibrium concept."""
        if ordering.concept == "nash":
            prover_ok = np.ones((n_pol, g), dtype=bool)
            if n_pol > 1:
                for i in range(n_pol):
                    others = np.delete(pl_key, i, axis=0)
                    prover_ok[i] = others.min(axis=0) >= pl_key[i] - tolerance
            verifier_ok = vl_key <= br_vloss[:, None] + tolerance
            return prover_ok & verifier_ok
        if ordering.concept == "prover-leading":
            # follower optimal + commitment optimal among policies, each
            # policy valued at its exact verifier best response
            follower_ok = vl_key <= br_vloss[:, None] + tolerance
            leader_vals = np.array(
                [
                    loss_key(prover_loss(problem, problem.policies[i], br_weights[i]))
                    for i in range(n_pol)
                ]
            )
            best = leader_vals.min()
            leader_ok = (leader_vals <= best + tolerance)[:, None]
            return follower_ok & leader_ok & (pl_key <= leader_vals[:, None] + tolerance)
        raise AssertionError(ordering)

    equilibria = []
    necessity = True
    necessity_witness = None
    sufficiency = True
    sufficiency_witness = None

    if ordering.concept in ("nash", "prover-leading"):
        eq_mask = grid_profile_equilibrium_mask()
        # candidate C&S flags, vectorized
        images = problem.message_images()
        bad_pairs = [
            (xi, m) for xi in range(nx) if f[xi] == 0 for m in images[xi]
        ]
        t_all = np.einsum("gk,kxm->gxm", grid, v)
        if bad_pairs:
            bp = np.array(bad_pairs)
            sound_mask = (t_all[:, bp[:, 0], bp[:, 1]] <= ACCEPT_THRESHOLD).all(axis=1)
        else:
            sound_mask = np.ones(g, dtype=bool)
        for i in range(n_pol):
            own = t_pol[i]
            preds = own > ACCEPT_THRESHOLD
            complete_mask = (preds == (f == 1)).all(axis=1)
            exact_mask = (np.abs(own - f) <= EXACT_TOL).all(axis=1)
            cs_exact = complete_mask & sound_mask & exact_mask
            eq_i = eq_mask[i]
            # necessity: exact complete+sound profiles must be equilibria
            viol = cs_exact & ~eq_i
            if viol.any() and necessity:
                j = int(np.flatnonzero(viol)[0])
                necessity = False
                necessity_witness = _profile_dict(
                    problem,
                    i,
                    grid[j],
                    (True, True, True),
                    {"reason": "complete and sound but not an equilibrium"},
                )
            # sufficiency: equilibria must be complete+sound
            badpos = eq_i & ~(complete_mask & sound_mask)
            if badpos.any() and sufficiency:
                j = int(np.flatnonzero(badpos)[0])
                sufficiency = False
                sufficiency_witness = _profile_dict(
                    problem,
                    i,
                    grid[j],
                    (bool(complete_mask[j]), bool(sound_mask[j]), bool(exact_mask[j])),
                    {"reason": "equilibrium but not a complete and sound protocol"},
                )
            for j in np.flatnonzero(eq_i):
                if len(equilibria) < max_listed:
                    equilibria.append(
                        _profile_dict(
                            problem,
                            i,
                            grid[j],
                            (
                                bool(complete_mask[j]),
                                bool(sound_mask[j]),
                                bool(exact_mask[j]),
                            ),
                        )
                    )
        eq_count = int(eq_mask.sum())

    else:  # verifier-leading, instance after verifier (rows 3 and 4)
        per_instance_prover = ordering.prover_post_reveal
        if per_instance_prover:
            follower_msgs, leader_key = _vlead_perx_follower(problem, grid)
        else:
            # argmin takes the first minimum, i.e. ties go to listed order
            follower_idx = np.argmin(pl_key, axis=0)
            leader_key = vl_key[follower_idx, np.arange(g)]
        minimum = leader_key.min()
        minimum = min(minimum, _vlead_refined_min(problem, ordering, tolerance))
        eq_flags = leader_key <= minimum + tolerance

        images = problem.message_images()
        eq_count = int(eq_flags.sum())
        for j in np.flatnonzero(eq_flags):
            w = grid[j]
            if per_instance_prover:
                own_msgs = follower_msgs[j]
                pol_idx = None
                extra = {"prover_responses": [int(m) for m in own_msgs]}
            else:
                pol_idx = int(follower_idx[j])
                own_msgs = problem.policies[pol_idx]
                extra = None
            flags = _profile_flags(problem, w, own_msgs)
            if not (flags[0] and flags[1]) and sufficiency:
                sufficiency = False
                sufficiency_witness = _profile_dict(
                    problem, pol_idx, w, flags,
                    {"reason": "equilibrium but not a complete and sound protocol"},
                )
            if len(equilibria) < max_listed:
                equilibria.append(_profile_dict(problem, pol_idx, w, flags, extra))

        # necessity over exact complete+sound (policy, mixture) profiles;
        # exactness prefilters the loop since it is rare on the grid
        exact_any = (np.abs(t_pol - f) <= EXACT_TOL).all(axis=2)
        for i in range(n_pol):
            for j in np.flatnonzero(exact_any[i]):
                flags = _profile_flags(problem, grid[j], problem.policies[i])
                if not (flags[0] and flags[1] and flags[2]):
                    continue
                ok = _vlead_profile_is_equilibrium(
                    problem,
                    ordering,
                    i,
                    grid[j],
                    minimum,
                    tolerance,
                )
                if not ok:
                    necessity = False
                    necessity_witness = _profile_dict(
                        problem, i, grid[j], flags,
                        {"reason": "complete and sound but not an equilibrium"},
                    )
                    break
            if not necessity:
                break

    failure = _failure_mode(ordering, necessity, sufficiency)
    return EquilibriumReport(
        ordering=ordering.value,
        concept=ordering.concept,
        necessity=necessity,
        sufficiency=sufficiency,
        failure_mode=failure,
        equilibria=equilibria,
        equilibria_count=eq_count,
        necessity_witness=necessity_witness,
        sufficiency_witness=sufficiency_witness,
    )


def _vlead_perx_follower(problem, grid, t_all=None):
    """Per-instance acceptance-maximizing responses and leader loss keys."""
    nx = len(problem.inputs)
    px = problem.px_arr
    f = problem.f_arr
    if t_all is None:
        t_all = np.einsum("gk,kxm->gxm", grid, problem.v_stack)
    images = problem.message_images()
    g = grid.shape[0]
    msgs = np.zeros((g, nx), dtype=int)
    acc = np.zeros((g, nx))
    for xi in range(nx):
        cols = t_all[:, xi, images[xi]]
        pick = np.argmax(cols, axis=1)
        msgs[:, xi] = np.asarray(images[xi])[pick]
        acc[:, xi] = cols[np.arange(g), pick]
    correct = np.where(f == 1, acc, 1.0 - acc)
    val = (px * -np.log(np.maximum(correct, LOG_FLOOR))).sum(axis=1)
    inf = ((correct < LOG_FLOOR) & (px > 0)).any(axis=1)
    return msgs, val + 1e9 * inf


def _vlead_refined_min(problem, ordering, tolerance) -> float:
    """Convex per-piece refinement of the verifier-leading leader minimum."""
    BIG = 1e9
    best = np.inf
    if ordering.prover_post_reveal:
        patterns = list(product(*problem.message_images()))
    else:
        patterns = [tuple(p) for p in problem.policies]
    for pattern in patterns:
        xs = np.arange(len(problem.inputs))
        acond = problem.v_stack[:, xs, list(pattern)]
        value, _, gradf, _hess = _verifier_objective(problem, acond, 0.0)
        w, _, ok = _pgd_on_simplex(value, gradf, len(problem.verifiers))
        if not ok:
            continue
        if ordering.prover_post_reveal:
            consistent = _lex_pattern(problem, w) == tuple(pattern)
        else:
            idx = problem.policies.index(tuple(pattern))
            consistent = prover_best_response(problem, w) == idx
        if consistent:
            loss = verifier_loss(problem, pattern, w)
            best = min(best, loss.key()[1] + BIG * loss.infinite)
    return best


def _lex_pattern(problem, weights) -> tuple:
    t = mixture_map(problem, weights)
    out = []
    for xi, image in enumerate(problem.message_images()):
        cols = t[xi, image]
        out.append(image[int(np.argmax(cols))])
    return tuple(out)


def _vlead_profile_is_equilibrium(problem, ordering, policy_idx, w, minimum, tol):
    BIG = 1e9
    policy = problem.policies[policy_idx]
    if ordering.prover_post_reveal:
        t = mixture_map(problem, w)
        for xi, image in enumerate(problem.message_images()):
            best = max(t[xi, m] for m in image)
            if t[xi, policy[xi]] < best - tol:
                return False
    else:
        cur = prover_loss(problem, policy, w)
        br = prover_loss(problem, problem.policies[prover_best_response(problem, w)], w)
        if br.improves_on(cur, tol):
            return False
    own = verifier_loss(problem, policy, w)
    return own.key()[1] + BIG * own.infinite <= minimum + tol


# ---------------------------------------------------------------------------
# orderings where the verifier moves after the reveal


def _vertex_response(problem, xi, mi):
    """Best deterministic verifier response at a single revealed pair."""
    col = problem.v_stack[:, xi, mi]
    want = problem.labels[xi]
    correct = col if want == 1 else 1.0 - col
    k = int(np.argmax(correct))
    return k, float(col[k]), float(correct[k])


def _classify_per_instance(problem, ordering, grid_resolution, tolerance, max_listed):
    nx = len(problem.inputs)
    f = problem.f_arr
    images = problem.message_images()
    v = problem.v_stack
    n_ver = len(problem.verifiers)

    # the trivial family: at each instance the verifier plays the vertex
    # whose row at that instance is constantly the revealed label
    trivial_choice = []
    for xi in range(nx):
        rows = [k for k in range(n_ver) if np.all(v[k, xi, :] == f[xi])]
        trivial_choice.append(rows[0] if rows else None)

    per_x_equilibria = []
    for xi in range(nx):
        entries = []
        for mi in images[xi]:
            _, _, best_correct = _vertex_response(problem, xi, mi)
            entries.append((mi, best_correct))
        per_x_equilibria.append(entries)

    equilibria = []
    eq_count = 0
    # enumerate per-instance candidates on a coarse grid for the listing
    grid = simplex_grid(n_ver, max(grid_resolution, 0.05))
    for xi in range(nx):
        t_x = grid @ v[:, xi, :]
        for mi in images[xi]:
            acc = t_x[:, mi]
            correct = acc if f[xi] == 1 else 1.0 - acc
            v_ok = correct >= 1.0 - tolerance  # loss ~ 0 is attainable per pair
            if ordering in (
                GameOrdering.INSTANCE_THEN_PROVER_VERIFIER,
                GameOrdering.INSTANCE_VERIFIER_PROVER,
            ):
                # the prover moves with the mixture in view: its message
                # must attain the maximal acceptance among reachable ones
                best_other = t_x[:, images[xi]].max(axis=1)
                p_ok = acc >= best_other - tolerance
            else:
                p_ok = np.ones(len(grid), dtype=bool)
            flags = v_ok & p_ok
            eq_count += int(flags.sum())
            for j in np.flatnonzero(flags)[: max(0, max_listed - len(equilibria))]:
                equilibria.append(
                    {
                        "instance": problem.inputs[xi],
                        "message": problem.messages[mi],
                        "verifier_weights": [round(float(x), 10) for x in grid[j]],
                        "per_instance": True,
                    }
                )

    # hunt a bad equilibrium: a family that is not a single mixture, or a
    # constant one that is not complete+sound
    bad_witness = None
    if all(c is not None for c in trivial_choice) and nx > 1:
        if len(set(trivial_choice)) > 1:
            bad_witness = {
                "per_instance_verifiers": [
                    problem.verifier_label(k) for k in trivial_choice
                ],
                "reason": (
                    "equilibrium family predicts the revealed label at every "
                    "instance while ignoring messages; it is not expressible "
                    "as any single verifier mixture, hence not a protocol"
                ),
            }
        else:
            w = np.zeros(n_ver)
            w[trivial_choice[0]] = 1.0
            complete, _ = check_completeness(problem, w)
            sound, _ = check_soundness(problem, w)
            if not (complete and sound):
                bad_witness = {
                    "verifier": problem.verifier_label(trivial_choice[0]),
                    "reason": "constant-response equilibrium that is not complete and sound",
                }

    if bad_witness is not None:
        necessity = False
        sufficiency = False
        notes = (
            "instance-revealed verifier: equilibrium membership does not "
            "certify protocols in this formulation; verdicts follow from the "
            "trivial equilibrium family shown"
        )
        witness = bad_witness
    else:
        # degenerate problems (single instance or constant labels): check
        # directly; the trivial behavior coincides with a real mixture
        necessity, sufficiency = True, True
        notes = "no non-protocol equilibrium family exists for this instance"
        witness = None

    failure = _failure_mode(ordering, necessity, sufficiency)
    return EquilibriumReport(
        ordering=ordering.value,
        concept=ordering.concept,
        necessity=necessity,
        sufficiency=sufficiency,
        failure_mode=failure,
        equilibria=equilibria[:max_listed],
        equilibria_count=eq_count,
        necessity_witness=witness,
        sufficiency_witness=witness,
        notes=notes,
    )


def _failure_mode(ordering, necessity, sufficiency) -> str:
    if necessity and sufficiency:
        return "none"
    if ordering.verifier_post_reveal:
        return "trivial-verifier"
    if ordering.concept == "prover-leading":
        return "flood-the-zone"
    return "coordination-problem"


def classify_ordering(
    problem: FiniteDecisionProblem,
    ordering: GameOrdering,
    grid_resolution: float = 0.01,
    tolerance: float = 1e-6,
    max_listed: int = 40,
    cap: int = 2_000_000,
) -> EquilibriumReport:
    """Classify one ordering; see the module docstring for semantics."""
    from math import comb

    n = round(1.0 / grid_resolution)
    size = comb(n + len(problem.verifiers) - 1, len(problem.verifiers) - 1)
    if size * max(1, len(problem.policies)) > cap:
        raise EnumerationCapError(
            f"{size} grid mixtures x {len(problem.policies)} policies exceeds cap"
        )
    if ordering.verifier_post_reveal:
        return _classify_per_instance(
            problem, ordering, grid_resolution, tolerance, max_listed
        )
    return _classify_global(problem, ordering, grid_resolution, tolerance, max_listed)


def classify_all(problem, grid_resolution=0.01, tolerance=1e-6):
    return {o: classify_ordering(problem, o, grid_resolution, tolerance) for o in GameOrdering}


def render_table(reports) -> str:
    """Plain-text verdict table, one row per ordering."""
    rows = [("Ordering", "Necessity", "Sufficiency", "Failure mode")]
    for report in reports.values() if isinstance(reports, dict) else reports:
        rows.append(
            (
                report.ordering,
                "yes" if report.necessity else "no",
                "yes" if report.sufficiency else "no",
                report.failure_mode,
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            lines.append("-" * (sum(widths) + 6))
    return "\n".join(lines)
