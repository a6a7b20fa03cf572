"""Episode traces: one JSONL file per run, bit-exact on round-trip.

Line 1 is a header (format and artifact versions, the RNG scheme, the
scenario digest, seed, policy, length); every following line is one tick's
record.  Floats serialize via Python's shortest-round-trip repr, so a
parsed trace compares equal to the in-memory original and replay can
demand bit-identity rather than tolerances.

Records carry the full reflect report (every candidate and its score) and
a model snapshot whenever the model's digest changed that tick, which is
what lets evaluation and explanation reconstruct the agent's model at any
tick without re-running anything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .core import ActionVec, InputError, StateVec
from .reflect import ReflectReport, hypothesis_to_dict
from .rng import GENERATOR_NAME, SCHEME_VERSION
from .scenario import atomic_write_text

TRACE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TraceHeader:
    scenario_digest: str
    scenario_name: str
    seed: int
    length: int
    policy: dict[str, Any]
    reflect_enabled: bool
    artifact_version: str
    format_version: int = TRACE_FORMAT_VERSION
    generator: dict[str, Any] = field(
        default_factory=lambda: {"name": GENERATOR_NAME, "scheme": SCHEME_VERSION}
    )


@dataclass(frozen=True)
class TraceRecord:
    tick: int
    state: StateVec
    action: ActionVec
    delta_hat: float
    true_delta: float
    predicted: dict[int, StateVec]
    predicted_next: StateVec
    observed: StateVec
    epsilon: float
    per_dim: tuple[float, ...]
    reflect: dict[str, Any] | None
    fit_event: str | None
    model_digest: str
    model_snapshot: dict[str, Any] | None


@dataclass(frozen=True)
class EpisodeTrace:
    header: TraceHeader
    records: tuple[TraceRecord, ...]


# ---------------------------------------------------------------------------
# Reflect report serialization
# ---------------------------------------------------------------------------


def report_to_dict(r: ReflectReport) -> dict[str, Any]:
    """Serialized report; the updated model travels separately as a snapshot."""
    return {
        "triggered": r.triggered,
        "epsilon": r.epsilon,
        "tau": r.tau,
        "candidates": [
            {"hypothesis": hypothesis_to_dict(hs.hypothesis), "score": hs.score}
            for hs in r.candidates
        ],
        "accepted": [hypothesis_to_dict(h) for h in r.accepted],
    }


# ---------------------------------------------------------------------------
# Record serialization
# ---------------------------------------------------------------------------


def header_to_dict(h: TraceHeader) -> dict[str, Any]:
    return {
        "kind": "header",
        "format_version": h.format_version,
        "artifact_version": h.artifact_version,
        "generator": h.generator,
        "scenario_digest": h.scenario_digest,
        "scenario_name": h.scenario_name,
        "seed": h.seed,
        "length": h.length,
        "policy": h.policy,
        "reflect_enabled": h.reflect_enabled,
    }


def header_from_dict(d: dict[str, Any]) -> TraceHeader:
    try:
        if d["kind"] != "header":
            raise InputError(f"first trace line has kind {d['kind']!r}, expected 'header'")
        return TraceHeader(
            scenario_digest=str(d["scenario_digest"]),
            scenario_name=str(d["scenario_name"]),
            seed=int(d["seed"]),
            length=int(d["length"]),
            policy=dict(d["policy"]),
            reflect_enabled=bool(d["reflect_enabled"]),
            artifact_version=str(d["artifact_version"]),
            format_version=int(d["format_version"]),
            generator=dict(d["generator"]),
        )
    except KeyError as exc:
        raise InputError(f"trace header missing key {exc}") from exc


def record_to_dict(r: TraceRecord) -> dict[str, Any]:
    return {
        "kind": "record",
        "tick": r.tick,
        "state": list(r.state.values),
        "action": list(r.action.values),
        "delta_hat": r.delta_hat,
        "true_delta": r.true_delta,
        "predicted": {str(k): list(v.values) for k, v in sorted(r.predicted.items())},
        "predicted_next": list(r.predicted_next.values),
        "observed": list(r.observed.values),
        "epsilon": r.epsilon,
        "per_dim": list(r.per_dim),
        "reflect": r.reflect,
        "fit_event": r.fit_event,
        "model_digest": r.model_digest,
        "model_snapshot": r.model_snapshot,
    }


def record_from_dict(d: dict[str, Any]) -> TraceRecord:
    try:
        return TraceRecord(
            tick=int(d["tick"]),
            state=StateVec(tuple(d["state"])),
            action=ActionVec(tuple(d["action"])),
            delta_hat=float(d["delta_hat"]),
            true_delta=float(d["true_delta"]),
            predicted={int(k): StateVec(tuple(v)) for k, v in d["predicted"].items()},
            predicted_next=StateVec(tuple(d["predicted_next"])),
            observed=StateVec(tuple(d["observed"])),
            epsilon=float(d["epsilon"]),
            per_dim=tuple(float(v) for v in d["per_dim"]),
            reflect=d["reflect"],
            fit_event=d["fit_event"],
            model_digest=str(d["model_digest"]),
            model_snapshot=d["model_snapshot"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed trace record: {exc}") from exc


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------


def trace_to_lines(trace: EpisodeTrace) -> list[str]:
    lines = [json.dumps(header_to_dict(trace.header), allow_nan=False)]
    lines += [json.dumps(record_to_dict(r), allow_nan=False) for r in trace.records]
    return lines


def write_trace(trace: EpisodeTrace, path: str) -> None:
    atomic_write_text(path, "\n".join(trace_to_lines(trace)) + "\n")


def read_trace(path: str) -> EpisodeTrace:
    try:
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise InputError(f"cannot read trace file {path}: {exc}") from exc
    if not lines:
        raise InputError(f"{path}: empty trace file")
    parsed = []
    for i, ln in enumerate(lines, start=1):
        try:
            parsed.append(json.loads(ln))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: line {i}: {exc.msg}") from exc
    header = header_from_dict(parsed[0])
    if header.format_version != TRACE_FORMAT_VERSION:
        raise InputError(f"unsupported trace format_version {header.format_version}")
    records = tuple(record_from_dict(d) for d in parsed[1:])
    return EpisodeTrace(header=header, records=records)
