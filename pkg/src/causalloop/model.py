"""The agent's predictive model: a hypothesized graph plus a delta estimate.

The model mirrors the world's additive per-edge semantics.  Applied to one
(state, action, time, delta) point it yields per-horizon predictions; to
predict what the *next observation* will be inside an episode it resolves
each edge's source value at the lagged cause tick from recorded history,
exactly as the world's delayed-effect queue would.  With the true graph,
delta_hat = 0 and no noise, those one-step predictions reproduce the world
bit for bit -- the oracle-equivalence tests lean on that.

Coefficient fitting is plain per-dimension ordinary least squares on
lagged features (numpy.linalg.lstsq); delta_hat is deliberately treated as
zero there, so coefficients own persistent scale and delta_hat only ever
carries transient residual scaling.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .core import (
    CausalTuple,
    DegenerateDataError,
    DimensionError,
    NotEnoughDataError,
    NotIdentifiableError,
    Perturbation,
    StateVec,
    Transition,
    DELTA_MAX,
)
from .scenario import canonical_json, graph_to_dict
from .world import CausalGraph, SourceKind


@dataclass(frozen=True)
class CausalModel:
    graph: CausalGraph
    delta_hat: float = 0.0
    history: tuple[Transition, ...] = ()
    fit_window: int = 64
    sigma_lik: float = 1.0
    capacity: int = 256
    delta_max: float = DELTA_MAX


@dataclass(frozen=True)
class Contribution:
    """One edge's predicted additive effect, landing ``horizon`` ticks out."""

    edge_index: int
    horizon: int
    target: int
    value: float


@dataclass(frozen=True)
class Prediction:
    """Single application of the model to one evaluation point."""

    tuple: CausalTuple
    horizon_states: dict[int, StateVec]
    contributions: tuple[Contribution, ...]


def append_history(m: CausalModel, tr: Transition) -> CausalModel:
    hist = m.history + (tr,)
    if len(hist) > m.capacity:
        hist = hist[-m.capacity :]
    return replace(m, history=hist)


# ---------------------------------------------------------------------------
# Single-application prediction
# ---------------------------------------------------------------------------


def counterfactual(m: CausalModel, t: CausalTuple, delta_prime: float | Perturbation) -> Prediction:
    """Model output at ``t`` under an alternative perturbation estimate.

    Horizons covered: 1 plus every distinct edge delay; the state at
    horizon k accumulates every contribution landing at or before k.
    """
    d = delta_prime.delta if isinstance(delta_prime, Perturbation) else float(delta_prime)
    if len(t.state) != m.graph.d_state or len(t.action) != m.graph.d_action:
        raise DimensionError("tuple dimensions do not match the model graph")
    scale = math.exp(-d)
    contribs: list[Contribution] = []
    for i, e in enumerate(m.graph.edges):
        v = t.action[e.source.index] if e.source.kind is SourceKind.ACTION else t.state[e.source.index]
        contribs.append(Contribution(i, e.delay, e.target, e.coefficient * e.form.apply(v) * scale))
    contribs.sort(key=lambda c: (c.horizon, c.target, c.edge_index))
    horizons = sorted({1} | {c.horizon for c in contribs})
    horizon_states: dict[int, StateVec] = {}
    for k in horizons:
        values = list(t.state.values)
        for c in contribs:
            if c.horizon <= k:
                values[c.target] += c.value
        horizon_states[k] = StateVec(tuple(values))
    return Prediction(tuple=t, horizon_states=horizon_states, contributions=tuple(contribs))


def predict(m: CausalModel, t: CausalTuple) -> Prediction:
    """Model output at ``t`` under the model's own delta_hat."""
    return counterfactual(m, t, m.delta_hat)


# ---------------------------------------------------------------------------
# In-episode (lag-resolved) prediction
# ---------------------------------------------------------------------------


def _tick_map(history: Iterable[Transition], extra: CausalTuple | None = None) -> dict[int, CausalTuple]:
    out = {tr.tuple.time.tick: tr.tuple for tr in history}
    if extra is not None:
        out[extra.time.tick] = extra
    return out


def _source_at(tick_map: dict[int, CausalTuple], ref, tick: int) -> float | None:
    """Value of a source variable at an absolute tick; None if unrecorded.

    Ticks before episode start contribute nothing (the world's queue starts
    empty), signalled as 0.0 rather than None.
    """
    if tick < 0:
        return 0.0
    tup = tick_map.get(tick)
    if tup is None:
        return None
    return tup.action[ref.index] if ref.kind is SourceKind.ACTION else tup.state[ref.index]


def _step_change(
    graph: CausalGraph,
    scale: float,
    tick_map: dict[int, CausalTuple],
    tick: int,
    lenient: bool = False,
) -> list[float] | None:
    """Per-dimension predicted change from tick to tick+1.

    A needed lag falling in a gap of the record yields None, unless
    ``lenient`` -- then the missing contribution is simply dropped.
    """
    change = [0.0] * graph.d_state
    for e in graph.edges:
        v = _source_at(tick_map, e.source, tick + 1 - e.delay)
        if v is None:
            if lenient:
                continue
            return None
        change[e.target] += e.coefficient * e.form.apply(v) * scale
    return change


def predict_next(m: CausalModel, current: CausalTuple) -> StateVec:
    """One-step-ahead prediction for the live loop.

    Missing lags (possible right after a history flush) are treated as
    zero contributions; the inaccuracy heals once enough fresh transitions
    accumulate.
    """
    tick_map = _tick_map(m.history, current)
    scale = math.exp(-m.delta_hat)
    values = list(current.state.values)
    for e in m.graph.edges:
        v = _source_at(tick_map, e.source, current.time.tick + 1 - e.delay)
        if v is None:
            continue
        values[e.target] += e.coefficient * e.form.apply(v) * scale
    return StateVec(tuple(values))


def rollout(
    graph: CausalGraph,
    delta_hat: float,
    history: Sequence[Transition],
    rows: Sequence[Transition],
    lenient: bool = False,
) -> list[StateVec | None]:
    """Teacher-forced one-step predictions for each row.

    Each prediction starts from the row's own recorded state and adds the
    modeled effects landing that tick, with lagged sources resolved against
    the full ``history``.  Rows whose lags are unrecorded yield None, or
    drop the missing contribution when ``lenient``.
    """
    tick_map = _tick_map(history)
    scale = math.exp(-delta_hat)
    out: list[StateVec | None] = []
    for tr in rows:
        change = _step_change(graph, scale, tick_map, tr.tuple.time.tick, lenient=lenient)
        if change is None:
            out.append(None)
        else:
            out.append(StateVec(tuple(s + c for s, c in zip(tr.tuple.state.values, change))))
    return out


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def fit(m: CausalModel) -> CausalModel:
    """Re-estimate every edge coefficient by OLS over the recent window.

    Structure (edges, delays, forms) and delta_hat are untouched; the
    estimation itself treats delta_hat as zero.  Raises
    :class:`NotEnoughDataError` on thin history and
    :class:`DegenerateDataError` when a design matrix is unusable
    (a constant feature column or rank deficiency).
    """
    edges = m.graph.edges
    if not edges:
        return m
    need = max(m.fit_window // 4, 2 * len(edges))
    if len(m.history) < need:
        raise NotEnoughDataError(f"fit needs >= {need} transitions, history has {len(m.history)}")
    window = m.history[-m.fit_window :]
    tick_map = _tick_map(m.history)

    new_coefs = list(e.coefficient for e in edges)
    for j in range(m.graph.d_state):
        incoming = m.graph.incoming(j)
        if not incoming:
            continue
        x_rows: list[list[float]] = []
        y_rows: list[float] = []
        for tr in window:
            t = tr.tuple.time.tick
            feats: list[float] = []
            for _, e in incoming:
                v = _source_at(tick_map, e.source, t + 1 - e.delay)
                if v is None:
                    break
                feats.append(e.form.apply(v))
            else:
                x_rows.append(feats)
                y_rows.append(tr.observed[j] - tr.tuple.state[j])
        if len(x_rows) < max(2, len(incoming)):
            raise NotEnoughDataError(
                f"fit for dim {j}: only {len(x_rows)} usable rows for {len(incoming)} edges"
            )
        x = np.asarray(x_rows)
        y = np.asarray(y_rows)
        spans = x.max(axis=0) - x.min(axis=0)
        if np.any(spans == 0.0):
            flat = int(np.argmax(spans == 0.0))
            raise DegenerateDataError(
                f"fit for dim {j}: feature column {flat} is constant over the window"
            )
        coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
        if rank < x.shape[1]:
            raise DegenerateDataError(f"fit for dim {j}: design matrix rank {rank} < {x.shape[1]}")
        for (edge_index, _), c in zip(incoming, coef):
            new_coefs[edge_index] = float(c)

    new_edges = tuple(replace(e, coefficient=c) for e, c in zip(edges, new_coefs))
    return replace(m, graph=replace(m.graph, edges=new_edges))


# ---------------------------------------------------------------------------
# Delta estimation
# ---------------------------------------------------------------------------


def estimate_delta(m: CausalModel, predicted_effect: float, observed_effect: float) -> Perturbation:
    """Invert the scale factor from one predicted/observed effect pair.

    Only the ratio is informative, so both effects must be nonzero and
    share a sign; otherwise the perturbation is not identifiable from this
    pair.  The result is clamped to the model's delta range.
    """
    if predicted_effect == 0.0:
        raise NotIdentifiableError("predicted effect is zero; delta is not identifiable")
    if observed_effect == 0.0 or (predicted_effect > 0.0) != (observed_effect > 0.0):
        raise NotIdentifiableError(
            "predicted and observed effects must be nonzero with matching signs"
        )
    d = math.log(predicted_effect / observed_effect)
    d = max(-m.delta_max, min(m.delta_max, d))
    return Perturbation(d)


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def model_snapshot(m: CausalModel) -> dict:
    """Serializable model identity: graph, delta_hat, hyperparameters.

    History is an episode artifact, not part of the model's identity, and
    is deliberately excluded.
    """
    return {
        "graph": graph_to_dict(m.graph),
        "delta_hat": m.delta_hat,
        "fit_window": m.fit_window,
        "sigma_lik": m.sigma_lik,
        "capacity": m.capacity,
        "delta_max": m.delta_max,
    }


def model_from_snapshot(snap: dict) -> CausalModel:
    from .scenario import graph_from_dict

    return CausalModel(
        graph=graph_from_dict(snap["graph"]),
        delta_hat=float(snap["delta_hat"]),
        fit_window=int(snap["fit_window"]),
        sigma_lik=float(snap["sigma_lik"]),
        capacity=int(snap["capacity"]),
        delta_max=float(snap["delta_max"]),
    )


def model_digest(m: CausalModel) -> str:
    return hashlib.sha256(canonical_json(model_snapshot(m)).encode()).hexdigest()[:16]
