"""Random-order contention resolution under a query budget.

Elements arrive in uniformly random order carrying Bernoulli suggestion
bits; a scheme may query a suggested element (revealing its success state)
as long as fewer than `patience` queries were made and nothing has been
output, and must output the first queried element whose state is 1. The
attenuation bit dampens high-mass elements so that the conditional query
probability is uniformly bounded below: by BETA for finite patience >= 2
and by 1 - 1/e for patience 1 or unbounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instances import is_infinite
from .numerics import BETA, ONE_MINUS_INV_E, attenuation_denominator
from .reports import std_error, wilson_halfwidth
from .rng import stream_rng


def attenuation_finite(s) -> float:
    """Dampening probability for finite patience >= 2.

    b(s) = BETA / int_0^1 e^{-y(1-s)} P[Poisson(2y) < 3] dy. The denominator
    equals BETA at s = 0, so b(0) = 1; it grows with s, so b is decreasing.
    The same function serves every finite patience level: it is calibrated
    against the patience-3 worst case, which dominates the others.
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
        raise ValueError("attenuation argument must lie in [0, 1]")
    return BETA / attenuation_denominator(np.clip(arr, 0.0, 1.0) if arr.ndim else min(max(float(arr), 0.0), 1.0))


def attenuation_infinite(s):
    """Dampening probability for patience 1 or unbounded.

    (1 - 1/e)(1 - s) / (1 - e^{-(1-s)}), extended by its limit 1 - 1/e at
    s = 1. Calibrated so the single-element worst case and the fully split
    (Poissonized) worst case both land exactly at 1 - 1/e.
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
        raise ValueError("attenuation argument must lie in [0, 1]")
    arr = np.clip(arr, 0.0, 1.0)
    t = 1.0 - arr
    small = t < 1e-9
    safe_t = np.where(small, 1.0, t)
    vals = np.where(small, 1.0, safe_t / (1.0 - np.exp(-safe_t)))
    out = ONE_MINUS_INV_E * vals
    if np.isscalar(s) or np.asarray(s).ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ContentionInput:
    """Abstract scheme input: n elements, an action set, a query budget,
    and per-(element, action) state and suggestion probabilities."""

    actions: tuple
    n: int
    patience: object  # int >= 1 or INFINITE
    p: np.ndarray  # shape (n, len(actions))
    x: np.ndarray  # shape (n, len(actions))

    def aggregate_x(self) -> np.ndarray:
        return self.x.sum(axis=1)

    def aggregate_px(self) -> np.ndarray:
        return (self.p * self.x).sum(axis=1)


def make_input(actions, patience, p, x) -> ContentionInput:
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if x.ndim == 1:
        x = x[:, None]
    inp = ContentionInput(actions=tuple(actions), n=p.shape[0], patience=patience, p=p, x=x)
    bad = validate_input(inp)
    if bad:
        raise ValueError("invalid scheme input: " + "; ".join(bad))
    return inp


def validate_input(inp: ContentionInput) -> list:
    out = []
    tol = 1e-9
    if inp.p.shape != (inp.n, len(inp.actions)) or inp.x.shape != inp.p.shape:
        out.append("p/x shape mismatch")
        return out
    if not (is_infinite(inp.patience) or (isinstance(inp.patience, int) and inp.patience >= 1)):
        out.append("patience must be an integer >= 1 or INFINITE")
    if np.any(inp.p < -tol) or np.any(inp.p > 1 + tol):
        out.append("state probabilities out of [0, 1]")
    if np.any(inp.x < -tol) or np.any(inp.x > 1 + tol):
        out.append("suggestion probabilities out of [0, 1]")
    if not is_infinite(inp.patience) and inp.x.sum() > float(inp.patience) + tol:
        out.append(f"total suggestion mass {inp.x.sum()} exceeds patience")
    if (inp.p * inp.x).sum() > 1 + tol:
        out.append(f"total state-weighted mass {(inp.p * inp.x).sum()} exceeds 1")
    rows = inp.x.sum(axis=1)
    if np.any(rows > 1 + tol):
        out.append("per-element suggestion mass exceeds 1")
    return out


def attenuation_probs(inp: ContentionInput, greedy: bool = False) -> np.ndarray:
    """Per-element attenuation-bit probability under the patience rule:
    patience 1 uses the suggestion mass, unbounded patience the
    state-weighted mass, and finite patience >= 2 the finite-case curve."""
    if greedy:
        return np.ones(inp.n)
    xa = np.minimum(inp.aggregate_x(), 1.0)
    pxa = np.minimum(inp.aggregate_px(), 1.0)
    if inp.patience == 1:
        return np.asarray(attenuation_infinite(xa), dtype=float).reshape(inp.n)
    if is_infinite(inp.patience):
        return np.asarray(attenuation_infinite(pxa), dtype=float).reshape(inp.n)
    return np.asarray(attenuation_finite(pxa), dtype=float).reshape(inp.n)


# ---------------------------------------------------------------------------
# Action-space reduction
# ---------------------------------------------------------------------------


class ActionCoupler:
    """Online coupling of a multi-action input to its single-action
    aggregate.

    Feeding the realized per-action suggestion bits produces the aggregate
    suggestion X_i; the coupled state P_i equals the suggested action's
    state when one is suggested and an auxiliary Bernoulli(p_i) draw
    otherwise, so (X_i, P_i) are independent with the aggregate marginals
    while X_i equals the action-sum and P_i X_i the state-weighted sum.
    """

    def __init__(self, inp: ContentionInput):
        self.inp = inp
        x = inp.aggregate_x()
        px = inp.aggregate_px()
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(x > 0, px / np.where(x > 0, x, 1.0), 0.0)
        self.x_agg = np.minimum(x, 1.0)
        self.p_agg = np.minimum(p, 1.0)

    def single_input(self) -> ContentionInput:
        return ContentionInput(
            actions=("*",),
            n=self.inp.n,
            patience=self.inp.patience,
            p=self.p_agg[:, None],
            x=self.x_agg[:, None],
        )

    def suggest(self, action_bits) -> int:
        bits = np.asarray(action_bits)
        if bits.sum() > 1:
            raise ValueError("at most one action may be suggested per element")
        return int(bits.sum())

    def couple_state(self, i: int, suggested_action, state_bits, rng) -> int:
        """Coupled P_i: the suggested action's state if any, else an
        auxiliary Bernoulli(p_i) draw. Only called after the decision for i
        is fixed, so reveals cannot leak into decisions."""
        if suggested_action is not None:
            return int(state_bits[suggested_action])
        return int(rng.random() < self.p_agg[i])


def reduce_to_single_action(inp: ContentionInput):
    """Aggregate a multi-action input to a single-action one plus the
    online coupler that transfers the selection guarantee back.

    x_i sums the per-action suggestion masses; p_i is the suggestion-
    weighted mean state probability (0 for mass-0 elements, which are never
    suggested or queried).
    """
    coupler = ActionCoupler(inp)
    return coupler.single_input(), coupler


# ---------------------------------------------------------------------------
# Scheme execution
# ---------------------------------------------------------------------------


@dataclass
class ContentionTrace:
    order: tuple  # arrival order of element indices
    suggestions: dict  # i -> suggested action index (only suggested elements)
    attenuation_bits: dict  # i -> bit (drawn on suggested arrivals)
    states: dict  # (i, action index) -> revealed state bit
    decisions: list  # (i, "pass" | "query")
    queried: list  # (i, action index) in query order
    output: tuple | None  # (i, action index) or None


def validate_trace(trace: ContentionTrace, inp: ContentionInput) -> list:
    out = []
    if not is_infinite(inp.patience) and len(trace.queried) > int(inp.patience):
        out.append("query budget exceeded")
    if trace.output is not None:
        i, a = trace.output
        if trace.states.get((i, a)) != 1:
            out.append("output without a successful state")
        if trace.suggestions.get(i) != a:
            out.append("output pair was not suggested")
        if (i, a) not in trace.queried:
            out.append("output pair was not queried")
    if len([1 for i, d in trace.decisions if d == "query"]) != len(trace.queried):
        out.append("decision/query mismatch")
    return out


def run_scheme(
    inp: ContentionInput,
    order,
    suggestions,
    state_oracle,
    rng=None,
    attenuation_bits: dict | None = None,
    greedy: bool = False,
) -> ContentionTrace:
    """Execute the single-action scheme on one realization.

    `order` is the arrival order (element indices), `suggestions` the
    realized 0/1 suggestion bits, and `state_oracle(i)` reveals the state
    of i, invoked only when i is queried. Attenuation bits are drawn from
    `rng` per suggested arrival unless injected.
    """
    if len(inp.actions) != 1:
        raise ValueError("run_scheme needs a single-action input; reduce first")
    bprob = attenuation_probs(inp, greedy=greedy)
    ell = inp.patience
    queried, decisions = [], []
    sug, bbits, states = {}, {}, {}
    output = None
    budget_left = math.inf if is_infinite(ell) else int(ell)
    for i in order:
        if not suggestions[i]:
            continue
        sug[i] = 0
        if attenuation_bits is not None:
            b = int(attenuation_bits[i])
        else:
            b = int(rng.random() < bprob[i])
        bbits[i] = b
        if b and budget_left > 0 and output is None:
            decisions.append((i, "query"))
            queried.append((i, 0))
            budget_left -= 1
            state = int(state_oracle(i))
            states[(i, 0)] = state
            if state:
                output = (i, 0)
        else:
            decisions.append((i, "pass"))
    return ContentionTrace(
        order=tuple(order),
        suggestions=sug,
        attenuation_bits=bbits,
        states=states,
        decisions=decisions,
        queried=queried,
        output=output,
    )


def run_scheme_multi(
    inp: ContentionInput,
    order,
    suggestions,
    state_oracle,
    rng,
    attenuation_bits: dict | None = None,
    greedy: bool = False,
) -> ContentionTrace:
    """Execute the scheme on a multi-action input via the aggregate coupling.

    `suggestions[i]` is the per-action bit vector (at most one set);
    `state_oracle(i, a)` reveals the state of (i, a). Elements are queried
    via their suggested action exactly when the aggregate scheme queries.
    Passed and unsuggested elements still receive coupled state reveals,
    recorded in the trace but never consulted by any decision.
    """
    single, coupler = reduce_to_single_action(inp)
    bprob = attenuation_probs(single, greedy=greedy)
    ell = inp.patience
    queried, decisions = [], []
    sug, bbits, states = {}, {}, {}
    output = None
    budget_left = math.inf if is_infinite(ell) else int(ell)
    for i in order:
        bits = np.asarray(suggestions[i])
        if coupler.suggest(bits) == 0:
            # coupled auxiliary reveal for the aggregate trace law
            coupler.couple_state(i, None, None, rng)
            continue
        a = int(np.nonzero(bits)[0][0])
        sug[i] = a
        if attenuation_bits is not None:
            b = int(attenuation_bits[i])
        else:
            b = int(rng.random() < bprob[i])
        bbits[i] = b
        if b and budget_left > 0 and output is None:
            decisions.append((i, "query"))
            queried.append((i, a))
            budget_left -= 1
            state = int(state_oracle(i, a))
            states[(i, a)] = state
            if state:
                output = (i, a)
        else:
            decisions.append((i, "pass"))
            # post-decision reveal; recorded only
            states[(i, a)] = int(state_oracle(i, a))
    return ContentionTrace(
        order=tuple(order),
        suggestions=sug,
        attenuation_bits=bbits,
        states=states,
        decisions=decisions,
        queried=queried,
        output=output,
    )


def draw_arrival_times(rng, n: int) -> np.ndarray:
    """Independent uniform arrival times; ties have probability zero and
    are broken by element index when sorting."""
    return rng.uniform(0.0, 1.0, n)


def order_from_times(times) -> np.ndarray:
    return np.argsort(times, kind="stable")


# ---------------------------------------------------------------------------
# Monte Carlo selectability
# ---------------------------------------------------------------------------


# ---------------------------------------------------------------------------
# Stress-input families
# ---------------------------------------------------------------------------


def poisson_regime_input(ell, n1_elements: int = 50) -> ContentionInput:
    """Near-worst-case input: a block of `n1_elements` small-mass state-1
    elements carrying the whole state-weighted budget, plus (for finite
    patience >= 2) mass-1 state-0 elements soaking up the remaining query
    budget. As the block grows this approaches the Poissonized worst case
    that pins the selection guarantee."""
    xs, ps = [], []
    share = 1.0 / n1_elements
    for _ in range(n1_elements):
        xs.append(share)
        ps.append(1.0)
    if not is_infinite(ell) and int(ell) >= 2:
        for _ in range(int(ell) - 1):
            xs.append(1.0)
            ps.append(0.0)
    return make_input(("*",), ell if is_infinite(ell) else int(ell), ps, xs)


def single_heavy_input(ell: int, x1: float = 0.8) -> ContentionInput:
    """One heavy state-1 element plus mass-1 state-0 blockers filling the
    budget: the regime where the finite-patience availability bound is at
    its weakest, exercised to confirm the scheme itself stays above the
    guarantee."""
    if not (isinstance(ell, int) and ell >= 2):
        raise ValueError("ell must be a finite integer >= 2")
    xs, ps = [x1], [1.0]
    rem = ell - x1
    while rem > 1.0 + 1e-12:
        xs.append(1.0)
        ps.append(0.0)
        rem -= 1.0
    if rem > 1e-12:
        xs.append(rem)
        ps.append(0.0)
    return make_input(("*",), ell, ps, xs)


@dataclass
class SelectabilityRow:
    element: int
    action: object
    x: float
    p: float
    trials_conditioned: int
    queried: int
    estimate: float
    std_error: float
    wilson_half: float
    bound: float


def selection_bound(patience) -> float:
    if patience == 1 or is_infinite(patience):
        return ONE_MINUS_INV_E
    return BETA


def estimate_selectability(
    inp: ContentionInput, trials: int, seed: int, greedy: bool = False
) -> list[SelectabilityRow]:
    """Monte Carlo estimate of P[i queried via a | suggested via a].

    Deterministic in (input, trials, seed). Trials run in fixed-size chunks
    with all randomness pre-drawn per chunk from counter-keyed streams.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n, n_a = inp.n, len(inp.actions)
    single, coupler = reduce_to_single_action(inp)
    bprob = attenuation_probs(single, greedy=greedy)
    x_cum = np.cumsum(inp.x, axis=1)  # suggestion thresholds per element
    x_tot = x_cum[:, -1]
    finite = not is_infinite(inp.patience)
    ell = int(inp.patience) if finite else 0

    cond = np.zeros((n, n_a), dtype=np.int64)
    hits = np.zeros((n, n_a), dtype=np.int64)

    chunk = 8192
    done = 0
    chunk_idx = 0
    while done < trials:
        c = min(chunk, trials - done)
        rng = stream_rng(seed, "prcrs-mc", chunk_idx)
        u_sug = rng.uniform(0.0, 1.0, (c, n))
        ykey = rng.uniform(0.0, 1.0, (c, n))
        u_b = rng.uniform(0.0, 1.0, (c, n))
        u_p = rng.uniform(0.0, 1.0, (c, n))

        # suggested action index per (trial, element); -1 when none
        if n_a == 1:
            act = np.where(u_sug < x_cum[None, :, 0], 0, -1)
        else:
            act = np.full((c, n), -1, dtype=np.int64)
            lo = np.zeros((1, n))
            for k in range(n_a):
                hi = x_cum[None, :, k]
                act = np.where((u_sug >= lo) & (u_sug < hi), k, act)
                lo = hi
        sug_mask = act >= 0
        b_bits = u_b < bprob[None, :]

        rows, cols = np.nonzero(sug_mask)
        bounds = np.searchsorted(rows, np.arange(c + 1))
        act_l = act.tolist()
        ykey_l = ykey.tolist()
        b_l = b_bits.tolist()
        up_l = u_p.tolist()
        p_mat = inp.p
        for t in range(c):
            idx = cols[bounds[t] : bounds[t + 1]].tolist()
            if not idx:
                continue
            yrow = ykey_l[t]
            idx.sort(key=lambda i: yrow[i])
            arow, brow, prow = act_l[t], b_l[t], up_l[t]
            budget = ell
            out = False
            for i in idx:
                a = arow[i]
                cond[i, a] += 1
                if out or (finite and budget == 0) or not brow[i]:
                    continue
                hits[i, a] += 1
                budget -= 1
                if prow[i] < p_mat[i, a]:
                    out = True
        done += c
        chunk_idx += 1

    bound = selection_bound(inp.patience)
    rows_out = []
    for i in range(n):
        for a in range(n_a):
            if inp.x[i, a] <= 0.0:
                continue
            nc = int(cond[i, a])
            h = int(hits[i, a])
            est = h / nc if nc else 0.0
            rows_out.append(
                SelectabilityRow(
                    element=i,
                    action=inp.actions[a],
                    x=float(inp.x[i, a]),
                    p=float(inp.p[i, a]),
                    trials_conditioned=nc,
                    queried=h,
                    estimate=est,
                    std_error=std_error(h, nc),
                    wilson_half=wilson_halfwidth(h, nc),
                    bound=bound,
                )
            )
    return rows_out
