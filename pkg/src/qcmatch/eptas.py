"""Approximation scheme for the star-graph problem.

Pipeline: estimate the optimum from the single-vertex edge LP, bucket the
(unknown) optimal query sequence by its large future-value drops, guess the
per-bucket base and increment values on an eps^2-grid, solve an exact
assignment feasibility program per guess, rebuild a policy from each
feasible assignment, and keep the best. The (1 - 7 eps) guarantee is
vacuous at desk-scale eps; the operative contracts are feasibility, value
never above the true optimum, and feasibility of the truth-rounded guess.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import simplex
from .exact import (
    BudgetExceeded,
    StarPolicy,
    _future_values_core,
    budget_override,
    star_opt_core,
)
from .instances import Instance, is_infinite

DEFAULT_GUESS_BUDGET = int(5e6)


@dataclass(frozen=True)
class BucketPlan:
    """A guess: K jump drops, 2K+1 alternating buckets (index 0 is the
    stable tail queried last), and per-bucket grid guesses of the base
    future value and the bucket's value increment."""

    estimate: float  # value estimate the grid is scaled by
    eps: float
    jump_flags: tuple  # True at jump buckets
    base_guess: tuple
    delta_guess: tuple

    @property
    def n_buckets(self) -> int:
        return len(self.jump_flags)


@dataclass
class BucketAssignment:
    by_bucket: tuple  # per bucket, tuple of assigned edge indices


def check_assignment(
    assign: BucketAssignment, plan: BucketPlan, loads, ell, relax: float = 0.0
) -> list:
    """The assignment program's constraints: each edge in one bucket, jump
    capacity 1, per-bucket load >= (1 - relax) * DeltaGuess, global budget."""
    out = []
    used = [e for bucket in assign.by_bucket for e in bucket]
    if len(used) != len(set(used)):
        out.append("edge assigned to two buckets")
    cap = np.inf if is_infinite(ell) else int(ell)
    if len(used) > cap:
        out.append("global budget exceeded")
    for i, bucket in enumerate(assign.by_bucket):
        if plan.jump_flags[i] and len(bucket) > 1:
            out.append(f"jump bucket {i} holds {len(bucket)} edges")
        load = sum(loads[i][e] for e in bucket)
        if load < (1.0 - relax) * plan.delta_guess[i] - 1e-12:
            out.append(f"bucket {i} load {load} below requirement")
    return out


def bucket_load(actions, base_guess: float) -> float:
    """max_a [(r(a) - base) q(a)]^+ : the edge's value contribution when its
    bucket's future value is pinned at `base_guess`."""
    best = 0.0
    for _a, q, r in actions:
        best = max(best, max(r - base_guess, 0.0) * q)
    return best


def single_star_lp(table, ell) -> float:
    """Edge LP restricted to one online vertex (the estimate source)."""
    cols = [(e, a, q, r) for e, acts in enumerate(table) for a, q, r in acts]
    n = len(cols)
    if n == 0:
        return 0.0
    rows, rhs = [], []
    rows.append([q for _, _, q, _ in cols])
    rhs.append(1.0)
    if not is_infinite(ell):
        rows.append([1.0] * n)
        rhs.append(float(ell))
    for e in range(len(table)):
        rows.append([1.0 if ce == e else 0.0 for ce, _, _, _ in cols])
        rhs.append(1.0)
    c = [q * r for _, _, q, r in cols]
    res = simplex.solve_packing_lp(c, np.array(rows), np.array(rhs))
    return float(res.value)


def estimate_value_candidates(table, ell, eps: float):
    """All powers of (1 + eps) in [LP/2, LP] for the single-vertex LP value.

    The LP upper-bounds the optimum and a constant-selectable rounding
    witnesses at least half of it, so the window contains the optimum and
    one candidate lands within factor (1 - eps) below it.
    """
    lpopt = single_star_lp(table, ell)
    if lpopt <= 0.0:
        return 0.0, []
    out = []
    e_val = lpopt / 2.0
    while e_val <= lpopt * (1.0 + 1e-12):
        out.append(e_val)
        e_val *= 1.0 + eps
    return lpopt, out


def _solve_assignment(loads, needs, caps, ell, n):
    """First feasible assignment of edges to buckets (exact search).

    `loads[i][e]` is edge e's load in bucket i, `needs[i]` the required
    load, `caps[i]` the bucket capacity. Buckets with zero need stay empty
    (never worse for feasibility). Returns per-bucket tuples or None.
    """
    order = sorted(range(len(needs)), key=lambda i: -needs[i])
    budget = n if is_infinite(ell) else min(int(ell), n)

    def feasible_tail(k, avail, budget_left):
        # cheap veto: every remaining bucket must be coverable in isolation
        for i in order[k:]:
            need = needs[i]
            if need <= 0:
                continue
            row = loads[i]
            tops = sorted((row[e] for e in avail), reverse=True)[: min(caps[i], budget_left)]
            if sum(tops) < need - 1e-12:
                return False
        return True

    def go(k, avail, budget_left, acc):
        if k == len(order):
            return acc
        i = order[k]
        need = needs[i]
        if need <= 0:
            return go(k + 1, avail, budget_left, acc)
        if not feasible_tail(k, avail, budget_left):
            return None
        row = loads[i]
        cands = sorted((e for e in avail if row[e] > 0), key=lambda e: -row[e])
        max_size = min(caps[i], budget_left, len(cands))
        for size in range(1, max_size + 1):
            if sum(row[e] for e in cands[:size]) < need - 1e-12:
                continue
            for subset in combinations(cands, size):
                if sum(row[e] for e in subset) < need - 1e-12:
                    continue
                res = go(k + 1, avail - set(subset), budget_left - size, acc + [(i, subset)])
                if res is not None:
                    return res
        return None

    res = go(0, set(range(n)), budget, [])
    if res is None:
        return None
    by_bucket = [()] * len(needs)
    for i, subset in res:
        by_bucket[i] = tuple(sorted(subset))
    return tuple(by_bucket)


def solve_bucket_ip(plan: BucketPlan, table, ell) -> BucketAssignment | None:
    """Exact feasibility search for the bucket-assignment program.

    Replaces randomized rounding with exact satisfaction of every
    constraint, including the load lower bounds, which desk-scale sizes
    allow.
    """
    n = len(table)
    m = plan.n_buckets
    loads = [[bucket_load(table[e], plan.base_guess[i]) for e in range(n)] for i in range(m)]
    caps = [1 if plan.jump_flags[i] else n for i in range(m)]
    per = _solve_assignment(loads, list(plan.delta_guess), caps, ell, n)
    if per is None:
        return None
    assign = BucketAssignment(by_bucket=per)
    bad = check_assignment(assign, plan, loads, ell)
    if bad:  # pragma: no cover - solver postcondition
        raise AssertionError(f"solver returned an invalid assignment: {bad}")
    return assign


def reconstruct(assign: BucketAssignment, plan: BucketPlan, table):
    """Rebuild a policy from an assignment: buckets are queried in reverse
    index order (the last bucket's edges first, bucket 0's last), ascending
    edge index inside a bucket; actions and value via the future-value
    recursion. Returns (value, order, actions, future values, bucket of
    each position)."""
    order = []
    bucket_of = []
    for i in range(plan.n_buckets - 1, -1, -1):
        for e in sorted(assign.by_bucket[i]):
            order.append(e)
            bucket_of.append(i)
    rvals, actions = _future_values_core([table[e] for e in order])
    return rvals[0], tuple(order), tuple(actions), rvals, tuple(bucket_of)


def _enumerate_guesses(eps, K):
    """Index-space guesses consistent with floor-to-grid rounding of a true
    bucket decomposition: base 0 at the tail bucket, each next base one of
    {base + delta, base + delta + 1} grid steps (clamped at the top), jump
    deltas at least (1/eps - 1) steps, and the final base + delta reaching
    the top of the window."""
    inv = round(1.0 / eps)
    gmax = inv * inv  # grid = {0, 1, ..., gmax} in units of eps^2 * E
    m = 2 * K + 1
    jump = [i % 2 == 1 for i in range(m)]

    def levels(i, bg, acc):
        dg_min = inv - 1 if jump[i] else 0
        for dg in range(dg_min, gmax + 1):
            if i == m - 1:
                if bg + dg >= gmax - 1:  # the top bucket must reach the estimate
                    yield acc + [(bg, dg)]
                continue
            nxt = {min(bg + dg, gmax), min(bg + dg + 1, gmax)}
            for bg2 in nxt:
                yield from levels(i + 1, bg2, acc + [(bg, dg)])

    yield from levels(0, 0, [])


def guess_space_bound(eps: float, n_candidates: int) -> float:
    """Upper bound on the enumerated guess count (before the final-bucket
    pruning): per jump count K there are 2K+1 buckets, each with its delta
    choices, and a binary carry per bucket transition."""
    inv = round(1.0 / eps)
    gmax = inv * inv
    stable_choices = gmax + 1
    jump_choices = max(gmax - inv + 2, 0)
    total = 0.0
    for K in range(0, inv + 1):
        total += stable_choices ** (K + 1) * jump_choices**K * 2.0 ** (2 * K)
    return total * n_candidates


def eptas_core(table, ell, eps: float, guess_budget: int | None = None):
    """Best policy found over the whole guess space.

    Returns (value, order as table indices, actions). Feasibility caching
    collapses guesses that induce the same multiset of (base, delta, jump)
    bucket descriptors, and reconstructions are cached by edge ordering.
    """
    inv = round(1.0 / eps)
    if not 0 < eps < 1 or abs(inv - 1.0 / eps) > 1e-9:
        raise ValueError("eps must be in (0, 1) with 1/eps an integer")
    budget = budget_override(guess_budget if guess_budget is not None else DEFAULT_GUESS_BUDGET)

    lpopt, candidates = estimate_value_candidates(table, ell, eps)
    best_val, best_order, best_actions = 0.0, (), ()
    if not candidates:
        return best_val, best_order, best_actions
    bound = guess_space_bound(eps, len(candidates))
    if bound > budget:
        raise BudgetExceeded(
            f"guess space ~{bound:.3g} exceeds budget {budget}", estimate=bound
        )

    n = len(table)
    guesses_tried = 0
    feasible = 0
    for e_val in candidates:
        step = eps * eps * e_val
        for K in range(0, inv + 1):
            m = 2 * K + 1
            jump = tuple(i % 2 == 1 for i in range(m))
            feas_cache = {}
            recon_cache = set()
            for combo in _enumerate_guesses(eps, K):
                guesses_tried += 1
                if guesses_tried > budget:
                    raise BudgetExceeded(
                        f"guess budget {budget} exceeded", estimate=float(guesses_tried)
                    )
                key = tuple(sorted(zip((bg for bg, _ in combo), (dg for _, dg in combo), jump)))
                assign_sorted = feas_cache.get(key, "miss")
                if assign_sorted == "miss":
                    plan_sorted = BucketPlan(
                        estimate=e_val,
                        eps=eps,
                        jump_flags=tuple(j for _, _, j in key),
                        base_guess=tuple(bg * step for bg, _, _ in key),
                        delta_guess=tuple(dg * step for _, dg, _ in key),
                    )
                    assign = solve_bucket_ip(plan_sorted, table, ell)
                    assign_sorted = None if assign is None else assign.by_bucket
                    feas_cache[key] = assign_sorted
                if assign_sorted is None:
                    continue
                feasible += 1
                # remap the canonically-sorted buckets back to guess order
                slots = sorted(range(m), key=lambda i: (combo[i][0], combo[i][1], jump[i]))
                by_bucket = [()] * m
                for pos, slot in enumerate(slots):
                    by_bucket[slot] = assign_sorted[pos]
                plan = BucketPlan(
                    estimate=e_val,
                    eps=eps,
                    jump_flags=jump,
                    base_guess=tuple(bg * step for bg, _ in combo),
                    delta_guess=tuple(dg * step for _, dg in combo),
                )
                assign = BucketAssignment(by_bucket=tuple(by_bucket))
                order_key = tuple(
                    e
                    for i in range(m - 1, -1, -1)
                    for e in sorted(assign.by_bucket[i])
                )
                if order_key in recon_cache:
                    continue
                recon_cache.add(order_key)
                val, order, actions, _, _ = reconstruct(assign, plan, table)
                if val > best_val:
                    best_val, best_order, best_actions = val, order, actions
    eptas_core.last_stats = {"guesses_tried": guesses_tried, "feasible_guesses": feasible}
    return best_val, best_order, best_actions


eptas_core.last_stats = {}


def eptas(inst: Instance, eps: float, guess_budget: int | None = None):
    """Approximation scheme on a single-online-vertex instance.

    Returns (StarPolicy, stats) where stats carries the guess counts.
    """
    if len(inst.V) != 1:
        raise ValueError("the star scheme needs exactly one online vertex")
    v = inst.V[0]
    edges = inst.incident_to_v(v)
    table = []
    for e in edges:
        acts = [(a, inst.q[(e, a)], inst.r_of(e, a)) for a in inst.A if (e, a) in inst.q]
        if not acts:
            acts = [(inst.A[0] if inst.A else "", 0.0, 0.0)]
        table.append(acts)
    value, order, actions = eptas_core(table, inst.patience[v], eps, guess_budget)
    stats = dict(eptas_core.last_stats)
    policy = StarPolicy(edges=tuple(edges[i] for i in order), actions=actions, value=value)
    return policy, stats


# ---------------------------------------------------------------------------
# Truth-rounded guesses (the feasibility lemma, checked constructively)
# ---------------------------------------------------------------------------


def truth_rounded_plan(table, ell, eps: float):
    """Bucket plan and assignment built from the true optimal policy.

    Brute-forces the optimum, marks the jump positions (future-value drops
    of at least eps times the optimum), floors the true per-bucket base and
    increment values to the grid with estimate = optimum, and assigns each
    bucket its own positions' edges. Returns (plan, assignment, stats) with
    the jump census; the assignment always satisfies the program, which is
    the constructive feasibility argument.
    """
    inv = round(1.0 / eps)
    if abs(inv - 1.0 / eps) > 1e-9:
        raise ValueError("eps must have integer reciprocal")
    opt_val, order, _ = star_opt_core(table, ell)
    if opt_val <= 0.0:
        plan = BucketPlan(
            estimate=0.0, eps=eps, jump_flags=(False,), base_guess=(0.0,), delta_guess=(0.0,)
        )
        return plan, BucketAssignment(by_bucket=((),)), {"jumps": 0, "opt": 0.0}
    rvals, _ = _future_values_core([table[e] for e in order])
    k = len(order)
    jumps = [i for i in range(k) if rvals[i] - rvals[i + 1] >= eps * rvals[0] - 1e-12]
    K = len(jumps)
    # positions bucket by bucket, from the tail stable bucket outward
    buckets_positions = []
    jump_desc = sorted(jumps, reverse=True)
    upper = k  # exclusive end of the current stable range
    for t in jump_desc:
        buckets_positions.append(list(range(t + 1, upper)))  # stable
        buckets_positions.append([t])  # jump
        upper = t
    buckets_positions.append(list(range(0, upper)))
    m = len(buckets_positions)
    jump_flags = tuple(i % 2 == 1 for i in range(m))

    e_val = opt_val
    step = eps * eps * e_val
    gmax = inv * inv

    def floor_grid(x):
        idx = min(int(np.floor(x / step + 1e-12)), gmax)
        return idx * step

    base, delta = [], []
    base_val = 0.0
    for positions in buckets_positions:
        dv = sum(rvals[i] - rvals[i + 1] for i in positions)
        base.append(floor_grid(base_val))
        delta.append(floor_grid(dv))
        base_val += dv
    plan = BucketPlan(
        estimate=e_val,
        eps=eps,
        jump_flags=jump_flags,
        base_guess=tuple(base),
        delta_guess=tuple(delta),
    )
    assign = BucketAssignment(
        by_bucket=tuple(tuple(sorted(order[i] for i in positions)) for positions in buckets_positions)
    )
    return plan, assign, {"jumps": K, "opt": opt_val, "max_jumps": inv}
