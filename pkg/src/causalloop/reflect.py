"""Mismatch-triggered self-repair of the agent's causal model.

When a one-step prediction misses by more than the threshold tau, the
agent proposes a bounded set of candidate edits to its model -- rescale
delta, change a coefficient or delay, add or remove an edge, or declare a
structural break and flush stale history.  Candidates are ranked by how
much likelihood they recover over a recent scoring window, then tested in
rank order against a reserved holdout of the most recent transitions; an
edit is kept only if it cuts holdout MSE by at least the fraction rho.
The working model updates after each acceptance, so later candidates must
beat the already-repaired model.

Candidate parameters that need estimation (a refitted coefficient, a new
edge's coefficient, how much history a break should keep) are resolved at
generation time against the *anomalous suffix*: the maximal run of most
recent transitions whose per-row error stays above a floor.  During a
persistent regime change that suffix is exactly the post-change data, so
refits are not diluted by stale rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Sequence

from .core import (
    CausalLoopError,
    NotEnoughDataError,
    NotIdentifiableError,
    PredictionError,
    Transition,
    loss,
)
from .model import (
    CausalModel,
    append_history,
    estimate_delta,
    rollout,
    _source_at,
    _tick_map,
)
from .world import CausalEdge, Form, SourceKind, VarRef

# Fraction of tau below which a row counts as "explained" when delimiting
# the anomalous suffix.
SUFFIX_FLOOR_FRACTION = 0.25


# ---------------------------------------------------------------------------
# Hypothesis variants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeltaShift:
    new_delta: float


@dataclass(frozen=True)
class CoefChange:
    edge_index: int
    new_coefficient: float


@dataclass(frozen=True)
class DelayChange:
    edge_index: int
    new_delay: int


@dataclass(frozen=True)
class EdgeAdd:
    source: VarRef
    target: int
    delay: int
    form: Form
    coefficient: float  # resolved at generation time


@dataclass(frozen=True)
class EdgeRemove:
    edge_index: int


@dataclass(frozen=True)
class StructuralBreak:
    keep: int  # trailing transitions retained after the history flush


Hypothesis = DeltaShift | CoefChange | DelayChange | EdgeAdd | EdgeRemove | StructuralBreak

# Acceptance order on score ties: parameter edits before structural ones,
# and the decay-stable coefficient edit before the transient delta edit --
# accepting a decaying delta for a persistent discrepancy would only
# re-trigger once the pull-to-zero erodes it.
_KIND_RANK = {
    CoefChange: 0,
    DeltaShift: 1,
    DelayChange: 2,
    EdgeRemove: 3,
    EdgeAdd: 4,
    StructuralBreak: 5,
}


def _tie_key(h: Hypothesis) -> tuple:
    if isinstance(h, DeltaShift):
        return (_KIND_RANK[DeltaShift], h.new_delta)
    if isinstance(h, CoefChange):
        return (_KIND_RANK[CoefChange], h.edge_index, h.new_coefficient)
    if isinstance(h, DelayChange):
        return (_KIND_RANK[DelayChange], h.edge_index, h.new_delay)
    if isinstance(h, EdgeRemove):
        return (_KIND_RANK[EdgeRemove], h.edge_index)
    if isinstance(h, EdgeAdd):
        return (_KIND_RANK[EdgeAdd], h.target, *h.source.sort_key(), h.delay)
    return (_KIND_RANK[StructuralBreak], h.keep)


@dataclass(frozen=True)
class HypothesisScore:
    hypothesis: Hypothesis
    score: float


@dataclass(frozen=True)
class ReflectSettings:
    budget: int = 32
    max_accepts: int = 2
    holdout: int = 8
    rho: float = 0.1
    k_max: int = 8


@dataclass(frozen=True)
class ReflectReport:
    triggered: bool
    epsilon: float
    tau: float
    candidates: tuple[HypothesisScore, ...]
    accepted: tuple[Hypothesis, ...]
    updated_model: CausalModel


# ---------------------------------------------------------------------------
# Trigger
# ---------------------------------------------------------------------------


def detect_mismatch(err: PredictionError, tau: float) -> bool:
    """Strictly above tau counts as a mismatch; at or below does not."""
    return err.epsilon > tau


# ---------------------------------------------------------------------------
# Applying hypotheses
# ---------------------------------------------------------------------------


def apply_hypothesis(m: CausalModel, h: Hypothesis) -> CausalModel:
    """A copy of ``m`` with the edit applied; the input is untouched."""
    if isinstance(h, DeltaShift):
        d = max(-m.delta_max, min(m.delta_max, h.new_delta))
        return replace(m, delta_hat=d)
    if isinstance(h, CoefChange):
        edges = list(m.graph.edges)
        edges[h.edge_index] = replace(edges[h.edge_index], coefficient=h.new_coefficient)
        return replace(m, graph=replace(m.graph, edges=tuple(edges)))
    if isinstance(h, DelayChange):
        edges = list(m.graph.edges)
        edges[h.edge_index] = replace(edges[h.edge_index], delay=h.new_delay)
        return replace(m, graph=replace(m.graph, edges=tuple(edges)))
    if isinstance(h, EdgeRemove):
        edges = tuple(e for i, e in enumerate(m.graph.edges) if i != h.edge_index)
        return replace(m, graph=replace(m.graph, edges=edges))
    if isinstance(h, EdgeAdd):
        new_edge = CausalEdge(
            source=h.source, target=h.target, delay=h.delay, coefficient=h.coefficient, form=h.form
        )
        return replace(m, graph=replace(m.graph, edges=m.graph.edges + (new_edge,)))
    # StructuralBreak: flush stale history, then refit whatever the kept
    # suffix supports; dims the suffix cannot support keep their coefficients.
    kept = m.history[-h.keep :] if h.keep > 0 else ()
    flushed = replace(m, history=kept)
    return _refit_on(flushed, kept)


def _refit_on(m: CausalModel, rows: Sequence[Transition]) -> CausalModel:
    """Joint per-dimension OLS over ``rows`` only; best-effort."""
    import numpy as np

    if not m.graph.edges or not rows:
        return m
    tick_map = _tick_map(m.history)
    new_coefs = [e.coefficient for e in m.graph.edges]
    scale = math.exp(-m.delta_hat)
    for j in range(m.graph.d_state):
        incoming = m.graph.incoming(j)
        if not incoming:
            continue
        x_rows, y_rows = [], []
        for tr in rows:
            t = tr.tuple.time.tick
            feats = []
            for _, e in incoming:
                v = _source_at(tick_map, e.source, t + 1 - e.delay)
                if v is None:
                    break
                feats.append(e.form.apply(v) * scale)
            else:
                x_rows.append(feats)
                y_rows.append(tr.observed[j] - tr.tuple.state[j])
        if len(x_rows) < max(2, len(incoming)):
            continue
        x = np.asarray(x_rows)
        y = np.asarray(y_rows)
        coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
        if rank < x.shape[1]:
            continue
        for (edge_index, _), c in zip(incoming, coef):
            new_coefs[edge_index] = float(c)
    edges = tuple(replace(e, coefficient=c) for e, c in zip(m.graph.edges, new_coefs))
    return replace(m, graph=replace(m.graph, edges=edges))


# ---------------------------------------------------------------------------
# Candidate generation
# ---------------------------------------------------------------------------


def anomalous_suffix(m: CausalModel, floor: float) -> int:
    """Length of the maximal trailing run of history rows with error > floor."""
    window = m.history[-m.fit_window :]
    preds = rollout(m.graph, m.delta_hat, m.history, window)
    count = 0
    for tr, pred in zip(reversed(window), reversed(preds)):
        if pred is None:
            break
        if loss(pred, tr.observed).epsilon <= floor:
            break
        count += 1
    return count


def _residual_fit(
    m: CausalModel,
    rows: Sequence[Transition],
    target: int,
    source: VarRef,
    delay: int,
    form: Form,
    exclude_edge: int | None,
) -> float | None:
    """Single-coefficient LS: how much of the target's unexplained change
    the given source/delay/form accounts for over ``rows``.

    Residuals are taken after every modeled edge except ``exclude_edge``.
    Returns None when the feature carries no signal on these rows.
    """
    tick_map = _tick_map(m.history)
    scale = math.exp(-m.delta_hat)
    sxx = 0.0
    sxy = 0.0
    for tr in rows:
        t = tr.tuple.time.tick
        v = _source_at(tick_map, source, t + 1 - delay)
        if v is None:
            continue
        x = form.apply(v) * scale
        resid = tr.observed[target] - tr.tuple.state[target]
        usable = True
        for i, e in enumerate(m.graph.edges):
            if i == exclude_edge or e.target != target:
                continue
            ev = _source_at(tick_map, e.source, t + 1 - e.delay)
            if ev is None:
                usable = False
                break
            resid -= e.coefficient * e.form.apply(ev) * scale
        if not usable:
            continue
        sxx += x * x
        sxy += x * resid
    if sxx <= 1e-12:
        return None
    return sxy / sxx


def generate_hypotheses(
    m: CausalModel,
    ctx: Transition,
    err: PredictionError,
    tau: float,
    settings: ReflectSettings = ReflectSettings(),
) -> tuple[Hypothesis, ...]:
    """Deterministic candidate set, clamped to the budget.

    Only state dimensions whose share of the error exceeds tau / d_state
    attract edits; a lone DeltaShift (when identifiable) and a lone
    StructuralBreak round out the set.
    """
    d_state = m.graph.d_state
    offending = [j for j in range(d_state) if err.per_dim[j] > tau / d_state]
    suffix = max(1, anomalous_suffix(m, tau * SUFFIX_FLOOR_FRACTION))
    est_rows = m.history[-suffix:]
    out: list[Hypothesis] = []

    # DeltaShift from the single worst dimension of the triggering context.
    j_star = max(range(d_state), key=lambda j: err.per_dim[j])
    pred = rollout(m.graph, m.delta_hat, m.history, [ctx])[0]
    if pred is not None:
        pred_eff = pred[j_star] - ctx.tuple.state[j_star]
        obs_eff = ctx.observed[j_star] - ctx.tuple.state[j_star]
        try:
            correction = estimate_delta(m, pred_eff, obs_eff).delta
        except NotIdentifiableError:
            correction = None
        if correction is not None:
            new_delta = max(-m.delta_max, min(m.delta_max, m.delta_hat + correction))
            if new_delta != m.delta_hat:
                out.append(DeltaShift(new_delta))

    existing_triples = {(e.source, e.target, e.delay) for e in m.graph.edges}
    existing_pairs = {(e.source, e.target) for e in m.graph.edges}

    for j in offending:
        incoming = m.graph.incoming(j)
        for edge_index, e in incoming:
            refit = _residual_fit(m, est_rows, j, e.source, e.delay, e.form, exclude_edge=edge_index)
            grid = [-e.coefficient, 0.5 * e.coefficient, 2.0 * e.coefficient]
            if refit is not None:
                grid.append(refit)
            seen: set[float] = set()
            for c in grid:
                if not math.isfinite(c) or c == e.coefficient or c in seen:
                    continue
                seen.add(c)
                out.append(CoefChange(edge_index, c))
        for edge_index, e in incoming:
            for k in (e.delay + 1, e.delay - 1, e.delay + 2, e.delay - 2):
                if not 1 <= k <= settings.k_max or k == e.delay:
                    continue
                if (e.source, e.target, k) in existing_triples:
                    continue
                out.append(DelayChange(edge_index, k))
        for edge_index, _ in incoming:
            out.append(EdgeRemove(edge_index))
        sources = [VarRef.action(i) for i in range(m.graph.d_action)] + [
            VarRef.state(i) for i in range(d_state)
        ]
        for src in sources:
            if (src, j) in existing_pairs:
                continue
            for delay in (1, 2):
                coef = _residual_fit(m, est_rows, j, src, delay, Form.LINEAR, exclude_edge=None)
                if coef is None or not math.isfinite(coef) or coef == 0.0:
                    continue
                out.append(EdgeAdd(src, j, delay, Form.LINEAR, coef))

    out.append(StructuralBreak(keep=suffix))

    # Dedup preserving order, then clamp to budget.
    unique: list[Hypothesis] = []
    seen_h: set[Hypothesis] = set()
    for h in out:
        if h not in seen_h:
            seen_h.add(h)
            unique.append(h)
    return tuple(unique[: settings.budget])


# ---------------------------------------------------------------------------
# Scoring and testing
# ---------------------------------------------------------------------------


def score_hypothesis(m: CausalModel, h: Hypothesis, window: Sequence[Transition]) -> float:
    """Likelihood gained by ``h`` over the current model on ``window``.

    Under an isotropic Gaussian observation model with stddev sigma_lik,
    the log-likelihood difference per row reduces to
    (|obs - pred_current|^2 - |obs - pred_h|^2) / (2 sigma_lik^2); rows
    either model cannot predict (unresolvable lags) are skipped for both.
    """
    if not window:
        return 0.0
    applied = apply_hypothesis(m, h)
    preds_h = rollout(applied.graph, applied.delta_hat, m.history, window)
    preds_m = rollout(m.graph, m.delta_hat, m.history, window)
    two_var = 2.0 * m.sigma_lik**2
    total = 0.0
    for tr, ph, pm in zip(window, preds_h, preds_m):
        if ph is None or pm is None:
            continue
        sq_m = sum((o - p) ** 2 for o, p in zip(tr.observed.values, pm.values))
        sq_h = sum((o - p) ** 2 for o, p in zip(tr.observed.values, ph.values))
        total += (sq_m - sq_h) / two_var
    return total


def test_hypothesis(
    m: CausalModel, h: Hypothesis, holdout: Sequence[Transition], rho: float
) -> tuple[bool, float, float]:
    """Accept iff the edit cuts holdout MSE by at least the fraction rho.

    Returns (accepted, holdout MSE of the current model, holdout MSE under
    the edit).  Raises :class:`NotEnoughDataError` when no holdout row is
    predictable under both models.
    """
    if not holdout:
        raise NotEnoughDataError("empty holdout")
    applied = apply_hypothesis(m, h)
    preds_h = rollout(applied.graph, applied.delta_hat, m.history, holdout)
    preds_m = rollout(m.graph, m.delta_hat, m.history, holdout)
    sq_m = 0.0
    sq_h = 0.0
    n = 0
    for tr, ph, pm in zip(holdout, preds_h, preds_m):
        if ph is None or pm is None:
            continue
        sq_m += loss(pm, tr.observed).epsilon
        sq_h += loss(ph, tr.observed).epsilon
        n += 1
    if n == 0:
        raise NotEnoughDataError("no predictable holdout rows")
    mse_m = sq_m / n
    mse_h = sq_h / n
    return mse_h <= (1.0 - rho) * mse_m, mse_m, mse_h


# ---------------------------------------------------------------------------
# Index remapping for sequential acceptance
# ---------------------------------------------------------------------------


def _remap(h: Hypothesis, index_map: dict[int, int]) -> Hypothesis | None:
    """Translate original edge indices to the working graph; None if gone."""
    if isinstance(h, (CoefChange, DelayChange, EdgeRemove)):
        pos = index_map.get(h.edge_index)
        if pos is None:
            return None
        return replace(h, edge_index=pos)
    return h


def _update_map(h: Hypothesis, index_map: dict[int, int]) -> dict[int, int]:
    if isinstance(h, EdgeRemove):
        removed = h.edge_index
        out = {}
        for orig, pos in index_map.items():
            if pos == removed:
                continue
            out[orig] = pos - 1 if pos > removed else pos
        return out
    return index_map


# ---------------------------------------------------------------------------
# The full loop
# ---------------------------------------------------------------------------


def reflect(
    m: CausalModel,
    ctx: Transition,
    tau: float,
    settings: ReflectSettings = ReflectSettings(),
) -> ReflectReport:
    """Generate, rank, test, and greedily accept model edits.

    ``ctx`` is expected to be the most recent transition; it is appended to
    history if the caller has not already done so.  When the context error
    is at or below tau nothing triggers and the model comes back untouched.
    """
    if not m.history or m.history[-1] != ctx:
        m = append_history(m, ctx)

    pred = rollout(m.graph, m.delta_hat, m.history, [ctx], lenient=True)[0]
    err = loss(pred, ctx.observed)
    if not detect_mismatch(err, tau):
        return ReflectReport(
            triggered=False,
            epsilon=err.epsilon,
            tau=tau,
            candidates=(),
            accepted=(),
            updated_model=m,
        )

    window = m.history[-m.fit_window :]
    holdout = window[-settings.holdout :]
    scoring = window[: -settings.holdout] if len(window) > settings.holdout else ()

    candidates = generate_hypotheses(m, ctx, err, tau, settings)
    scored = sorted(
        (HypothesisScore(h, score_hypothesis(m, h, scoring)) for h in candidates),
        key=lambda hs: (-hs.score, _tie_key(hs.hypothesis)),
    )

    working = m
    index_map = {i: i for i in range(len(m.graph.edges))}
    accepted: list[Hypothesis] = []
    for hs in scored:
        if len(accepted) >= settings.max_accepts:
            break
        h = _remap(hs.hypothesis, index_map)
        if h is None:
            continue
        try:
            ok, _, _ = test_hypothesis(working, h, holdout, settings.rho)
            if ok:
                working = apply_hypothesis(working, h)
                index_map = _update_map(h, index_map)
                accepted.append(hs.hypothesis)
        except CausalLoopError:
            continue

    return ReflectReport(
        triggered=True,
        epsilon=err.epsilon,
        tau=tau,
        candidates=tuple(scored),
        accepted=tuple(accepted),
        updated_model=working,
    )


# ---------------------------------------------------------------------------
# Serialization (used by trace records)
# ---------------------------------------------------------------------------


def hypothesis_to_dict(h: Hypothesis) -> dict[str, Any]:
    if isinstance(h, DeltaShift):
        return {"kind": "delta_shift", "new_delta": h.new_delta}
    if isinstance(h, CoefChange):
        return {"kind": "coef_change", "edge_index": h.edge_index, "new_coefficient": h.new_coefficient}
    if isinstance(h, DelayChange):
        return {"kind": "delay_change", "edge_index": h.edge_index, "new_delay": h.new_delay}
    if isinstance(h, EdgeRemove):
        return {"kind": "edge_remove", "edge_index": h.edge_index}
    if isinstance(h, EdgeAdd):
        return {
            "kind": "edge_add",
            "source": {"kind": h.source.kind.value, "index": h.source.index},
            "target": h.target,
            "delay": h.delay,
            "form": h.form.value,
            "coefficient": h.coefficient,
        }
    return {"kind": "structural_break", "keep": h.keep}


def hypothesis_from_dict(d: dict[str, Any]) -> Hypothesis:
    kind = d.get("kind")
    if kind == "delta_shift":
        return DeltaShift(float(d["new_delta"]))
    if kind == "coef_change":
        return CoefChange(int(d["edge_index"]), float(d["new_coefficient"]))
    if kind == "delay_change":
        return DelayChange(int(d["edge_index"]), int(d["new_delay"]))
    if kind == "edge_remove":
        return EdgeRemove(int(d["edge_index"]))
    if kind == "edge_add":
        return EdgeAdd(
            source=VarRef(SourceKind(d["source"]["kind"]), int(d["source"]["index"])),
            target=int(d["target"]),
            delay=int(d["delay"]),
            form=Form(d["form"]),
            coefficient=float(d["coefficient"]),
        )
    if kind == "structural_break":
        return StructuralBreak(int(d["keep"]))
    raise ValueError(f"unknown hypothesis kind {kind!r}")
