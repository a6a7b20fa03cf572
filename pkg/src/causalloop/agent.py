"""The closed loop: policy acts, model predicts, world answers, agent repairs.

Each tick the agent forms a one-step prediction from its model and
history, the world advances, and the squared error decides what happens
next: above tau the repair loop (:func:`causalloop.reflect.reflect`) runs
and may edit the model; at or below tau the delta estimate decays ten
percent toward zero, so transient perturbation estimates do not outlive
their evidence.  Every ``fit_every`` ticks a scheduled least-squares refit
re-estimates coefficients -- but its result is discarded if it predicts
the reserved recent holdout worse than the current model does, which keeps
a window still contaminated by pre-break rows from undoing a repair.

``run_episode`` is a pure function of (scenario, policy, seed, length,
reflect_enabled); replay re-runs it and demands bit-identical records.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

from . import rng as _rng
from .core import (
    ActionVec,
    CausalTuple,
    ConfigError,
    DegenerateDataError,
    NotEnoughDataError,
    Perturbation,
    ReplayError,
    StateVec,
    TimeIndex,
    Transition,
    loss,
)
from .model import (
    CausalModel,
    append_history,
    fit,
    model_digest,
    model_snapshot,
    predict,
    predict_next,
    rollout,
)
from .reflect import ReflectSettings, detect_mismatch, reflect
from .scenario import ScenarioConfig, scenario_digest
from .trace import EpisodeTrace, TraceHeader, TraceRecord, record_to_dict, report_to_dict
from .world import world_init, world_step

DELTA_DECAY = 0.9  # pull-to-zero on delta_hat per calm step


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomPolicy:
    """Uniform actions in [low, high), one fresh draw per tick."""

    low: float = -1.0
    high: float = 1.0


@dataclass(frozen=True)
class CyclicPolicy:
    """Repeats a fixed list of action vectors."""

    vectors: tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class ProbePolicy:
    """One-hot excitation, cycling through action dimensions."""

    magnitude: float = 1.0


@dataclass(frozen=True)
class ScriptedPolicy:
    """Explicit per-tick actions; the episode must not outrun the script."""

    actions: tuple[tuple[float, ...], ...]


Policy = RandomPolicy | CyclicPolicy | ProbePolicy | ScriptedPolicy


def policy_action(policy: Policy, seed: int, tick: int, d_action: int) -> ActionVec:
    if d_action == 0:
        return ActionVec(())
    if isinstance(policy, RandomPolicy):
        gen = _rng.stream(seed, _rng.STREAM_POLICY, tick)
        vals = gen.uniform(policy.low, policy.high, size=d_action)
        return ActionVec(tuple(float(v) for v in vals))
    if isinstance(policy, CyclicPolicy):
        if not policy.vectors:
            raise ConfigError("cyclic policy needs at least one vector")
        vec = policy.vectors[tick % len(policy.vectors)]
        if len(vec) != d_action:
            raise ConfigError(f"cyclic policy vector has {len(vec)} dims, need {d_action}")
        return ActionVec(tuple(vec))
    if isinstance(policy, ProbePolicy):
        vals = [0.0] * d_action
        vals[tick % d_action] = policy.magnitude
        return ActionVec(tuple(vals))
    if tick >= len(policy.actions):
        raise ConfigError(f"scripted policy has {len(policy.actions)} actions, tick {tick} requested")
    vec = policy.actions[tick]
    if len(vec) != d_action:
        raise ConfigError(f"scripted action has {len(vec)} dims, need {d_action}")
    return ActionVec(tuple(vec))


def policy_to_dict(policy: Policy) -> dict[str, Any]:
    if isinstance(policy, RandomPolicy):
        return {"kind": "random", "low": policy.low, "high": policy.high}
    if isinstance(policy, CyclicPolicy):
        return {"kind": "cyclic", "vectors": [list(v) for v in policy.vectors]}
    if isinstance(policy, ProbePolicy):
        return {"kind": "probe", "magnitude": policy.magnitude}
    return {"kind": "scripted", "actions": [list(v) for v in policy.actions]}


def policy_from_dict(d: dict[str, Any]) -> Policy:
    kind = d.get("kind")
    if kind == "random":
        return RandomPolicy(low=float(d["low"]), high=float(d["high"]))
    if kind == "cyclic":
        return CyclicPolicy(vectors=tuple(tuple(float(x) for x in v) for v in d["vectors"]))
    if kind == "probe":
        return ProbePolicy(magnitude=float(d["magnitude"]))
    if kind == "scripted":
        return ScriptedPolicy(actions=tuple(tuple(float(x) for x in v) for v in d["actions"]))
    raise ConfigError(f"unknown policy kind {kind!r}")


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------


def initial_model(sc: ScenarioConfig) -> CausalModel:
    return CausalModel(
        graph=sc.effective_agent_graph(),
        delta_hat=0.0,
        fit_window=sc.fit_window,
        sigma_lik=sc.sigma_lik,
        capacity=sc.history_capacity,
        delta_max=sc.delta_max,
    )


def _fit_improves(current: CausalModel, fitted: CausalModel, holdout_size: int) -> bool:
    """Keep a scheduled fit only if it does not predict the recent holdout
    worse than the model it would replace."""
    holdout = current.history[-holdout_size:]
    preds_new = rollout(fitted.graph, fitted.delta_hat, current.history, holdout)
    preds_old = rollout(current.graph, current.delta_hat, current.history, holdout)
    sq_new = sq_old = 0.0
    n = 0
    for tr, pn, po in zip(holdout, preds_new, preds_old):
        if pn is None or po is None:
            continue
        sq_new += loss(pn, tr.observed).epsilon
        sq_old += loss(po, tr.observed).epsilon
        n += 1
    if n == 0:
        return True
    return sq_new <= sq_old


def run_episode(
    scenario: ScenarioConfig,
    policy: Policy,
    seed: int,
    length: int,
    reflect_enabled: bool = True,
    artifact_version: str = "0.1.0",
) -> EpisodeTrace:
    """Run one fully deterministic episode and return its trace."""
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    sc = scenario.materialized()
    sc.validate()
    w = world_init(sc, seed)
    m = initial_model(sc)
    settings = ReflectSettings(
        budget=sc.budget,
        max_accepts=sc.max_accepts,
        holdout=sc.holdout,
        rho=sc.rho,
        k_max=sc.k_max,
    )
    tau = sc.effective_tau()

    records: list[TraceRecord] = []
    state = StateVec(sc.initial_state)
    prev_digest: str | None = None
    for t in range(length):
        action = policy_action(policy, seed, t, sc.d_action)
        tup = CausalTuple(state, action, TimeIndex(t), Perturbation(m.delta_hat))
        pred = predict(m, tup)
        pred_next = predict_next(m, tup)
        w, observed, true_delta = world_step(w, action)
        err = loss(pred_next, observed)
        tr = Transition(tup, 1, observed)
        m = append_history(m, tr)

        report_dict: dict[str, Any] | None = None
        if reflect_enabled and detect_mismatch(err, tau):
            report = reflect(m, tr, tau, settings)
            m = report.updated_model
            report_dict = report_to_dict(report)
        elif m.delta_hat != 0.0:
            m = replace(m, delta_hat=DELTA_DECAY * m.delta_hat)

        fit_event: str | None = None
        if (t + 1) % sc.fit_every == 0:
            try:
                fitted = fit(m)
                if _fit_improves(m, fitted, sc.holdout):
                    m = fitted
                    fit_event = "applied"
                else:
                    fit_event = "rejected"
            except (NotEnoughDataError, DegenerateDataError) as exc:
                fit_event = f"skipped: {type(exc).__name__}"

        digest = model_digest(m)
        records.append(
            TraceRecord(
                tick=t,
                state=state,
                action=action,
                delta_hat=tup.delta.delta,
                true_delta=true_delta,
                predicted=pred.horizon_states,
                predicted_next=pred_next,
                observed=observed,
                epsilon=err.epsilon,
                per_dim=err.per_dim,
                reflect=report_dict,
                fit_event=fit_event,
                model_digest=digest,
                model_snapshot=model_snapshot(m) if digest != prev_digest else None,
            )
        )
        prev_digest = digest
        state = observed

    header = TraceHeader(
        scenario_digest=scenario_digest(sc),
        scenario_name=sc.name,
        seed=seed,
        length=length,
        policy=policy_to_dict(policy),
        reflect_enabled=reflect_enabled,
        artifact_version=artifact_version,
    )
    return EpisodeTrace(header=header, records=tuple(records))


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


def replay(trace: EpisodeTrace, scenario: ScenarioConfig) -> EpisodeTrace:
    """Re-run the recorded episode and verify bit-identical records.

    Returns the freshly computed trace on success; raises
    :class:`ReplayError` naming the first divergent tick otherwise.
    """
    sc = scenario.materialized()
    digest = scenario_digest(sc)
    if trace.header.scenario_digest != digest:
        raise ReplayError(
            f"scenario digest mismatch: trace has {trace.header.scenario_digest[:12]}..., "
            f"scenario is {digest[:12]}..."
        )
    expected_gen = {"name": _rng.GENERATOR_NAME, "scheme": _rng.SCHEME_VERSION}
    if trace.header.generator != expected_gen:
        raise ReplayError(f"generator scheme mismatch: {trace.header.generator} != {expected_gen}")
    if not trace.records:
        raise ReplayError("trace has no records")
    if len(trace.records) != trace.header.length:
        raise ReplayError(
            f"trace has {len(trace.records)} records, header declares {trace.header.length}"
        )
    fresh = run_episode(
        sc,
        policy_from_dict(trace.header.policy),
        trace.header.seed,
        trace.header.length,
        trace.header.reflect_enabled,
        artifact_version=trace.header.artifact_version,
    )
    for old, new in zip(trace.records, fresh.records):
        if record_to_dict(old) != record_to_dict(new):
            raise ReplayError(f"replay diverged at tick {old.tick}")
    return fresh
