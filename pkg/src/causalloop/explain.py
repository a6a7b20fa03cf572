"""Deterministic explanations whose every number is checkable.

The template backend turns a model application into fixed-format prose:
one sentence per predicted contribution, an optional counterfactual
contrast, and a short summary of a repair event.  Each explanation carries
a ``grounding`` dict holding every quantity the text mentions; the
anti-hallucination contract is that every numeral extracted from the text
appears among the grounded values, formatted the same way (six
significant digits, trailing zeros trimmed).

An LLM may optionally render the same facts as free text, but only
through :func:`narrate_via_llm`, which is inert unless the
``EXPLAIN_LLM_URL`` environment variable is set.  Nothing else in the
package ever talks to a network.
"""

from __future__ import annotations

import enum
import math
import os
import re
from dataclasses import dataclass
from typing import Any

from .core import CausalTuple, ConfigError, InputError, Perturbation
from .model import CausalModel, counterfactual, predict
from .scenario import canonical_json
from .trace import TraceRecord, record_to_dict

ENV_LLM_URL = "EXPLAIN_LLM_URL"
ENV_LLM_KEY = "EXPLAIN_LLM_KEY"


# ---------------------------------------------------------------------------
# Number formatting and numeral auditing
# ---------------------------------------------------------------------------


def fmt(v: float) -> str:
    """Canonical numeric rendering: <= 6 significant digits, no trailing zeros."""
    v = float(v)
    if v == 0.0:
        v = 0.0  # collapse -0.0
    return format(v, ".6g")


def fmt_vec(values) -> str:
    vals = values.values if hasattr(values, "values") else values
    return "[" + ", ".join(fmt(v) for v in vals) + "]"


_NUMERAL = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")


def extract_numerals(text: str) -> list[str]:
    """Every numeric token in the text.

    A minus immediately preceded by ``^`` belongs to template notation
    (the ``e^-x`` factor), not to the numeral's sign.
    """
    out = []
    for match in _NUMERAL.finditer(text):
        token = match.group(0)
        if token.startswith("-") and match.start() > 0 and text[match.start() - 1] == "^":
            token = token[1:]
        out.append(token)
    return out


def _collect(value: Any, into: set[str]) -> None:
    if isinstance(value, bool):
        return
    if isinstance(value, (int, float)):
        into.add(fmt(value))
        into.add(str(value))
    elif isinstance(value, (list, tuple)):
        for v in value:
            _collect(v, into)
    elif isinstance(value, dict):
        for v in value.values():
            _collect(v, into)
    elif hasattr(value, "values") and not isinstance(value, str):
        _collect(value.values, into)


def grounded_numerals(grounding: dict[str, Any]) -> set[str]:
    out: set[str] = set()
    _collect(grounding, out)
    return out


class ExplanationKind(enum.Enum):
    CAUSAL = "causal"
    COUNTERFACTUAL = "counterfactual"
    REFLECTION_SUMMARY = "reflection_summary"


@dataclass(frozen=True)
class Explanation:
    kind: ExplanationKind
    text: str
    grounding: dict[str, Any]


def is_grounded(expl: Explanation) -> bool:
    """True iff every numeral in the text appears among the grounded values."""
    return set(extract_numerals(expl.text)) <= grounded_numerals(expl.grounding)


# ---------------------------------------------------------------------------
# Template backend
# ---------------------------------------------------------------------------


def explain_transition(m: CausalModel, t: CausalTuple) -> Explanation:
    """One sentence per modeled contribution of this action/state point."""
    pred = predict(m, t)
    scale = math.exp(-m.delta_hat)
    tick = t.time.tick
    action_s = fmt_vec(t.action)
    sentences = []
    contribs = []
    for c in pred.contributions:
        sentences.append(
            f"At tick {tick}, action {action_s} is predicted to change state dimension "
            f"{c.target} by {fmt(c.value)} after a delay of {c.horizon} ticks, scaled by "
            f"perturbation factor e^-{fmt(m.delta_hat)} = {fmt(scale)}."
        )
        contribs.append({"target": c.target, "delay": c.horizon, "effect": c.value})
    if not sentences:
        sentences.append(
            f"At tick {tick}, action {action_s} has no modeled causal effect; "
            "the state is predicted to persist."
        )
    grounding = {
        "tick": tick,
        "action": list(t.action.values),
        "state": list(t.state.values),
        "delta_hat": m.delta_hat,
        "scale": scale,
        "contributions": contribs,
    }
    return Explanation(ExplanationKind.CAUSAL, " ".join(sentences), grounding)


def explain_counterfactual(
    m: CausalModel, t: CausalTuple, delta_prime: float | Perturbation
) -> Explanation:
    """Contrast the factual prediction with one under an alternative delta.

    The contrast is drawn at the farthest modeled horizon, where every
    contribution has landed.
    """
    d_prime = delta_prime.delta if isinstance(delta_prime, Perturbation) else float(delta_prime)
    factual = predict(m, t)
    contrary = counterfactual(m, t, d_prime)
    horizon = max(factual.horizon_states)
    s_factual = factual.horizon_states[horizon]
    s_contrary = contrary.horizon_states[horizon]
    if s_contrary == s_factual:
        text = (
            f"Had perturbation δ={fmt(m.delta_hat)} not occurred, the model predicts "
            f"no difference: state {fmt_vec(s_factual)} either way."
        )
    else:
        text = (
            f"Had perturbation δ={fmt(m.delta_hat)} not occurred, the model predicts "
            f"the system would have transitioned to state {fmt_vec(s_contrary)} "
            f"instead of {fmt_vec(s_factual)}."
        )
    grounding = {
        "tick": t.time.tick,
        "delta_hat": m.delta_hat,
        "delta_prime": d_prime,
        "horizon": horizon,
        "factual": list(s_factual.values),
        "counterfactual": list(s_contrary.values),
    }
    return Explanation(ExplanationKind.COUNTERFACTUAL, text, grounding)


_HYPOTHESIS_PHRASES = {
    "delta_shift": lambda h: f"the perturbation estimate was set to {fmt(h['new_delta'])}",
    "coef_change": lambda h: (
        f"edge {h['edge_index']} took coefficient {fmt(h['new_coefficient'])}"
    ),
    "delay_change": lambda h: f"edge {h['edge_index']} took delay {h['new_delay']}",
    "edge_remove": lambda h: f"edge {h['edge_index']} was removed",
    "edge_add": lambda h: (
        f"a {h['source']['kind']}[{h['source']['index']}] link to state dimension "
        f"{h['target']} was added with delay {h['delay']} and coefficient "
        f"{fmt(h['coefficient'])}"
    ),
    "structural_break": lambda h: (
        f"a structural break was declared, keeping the last {h['keep']} transitions"
    ),
}


def explain_reflection(tick: int, report: dict[str, Any]) -> Explanation:
    """Summarize a repair event from its serialized report."""
    eps = report["epsilon"]
    tau = report["tau"]
    n_cand = len(report["candidates"])
    n_acc = len(report["accepted"])
    parts = [
        f"At tick {tick}, prediction error {fmt(eps)} exceeded the threshold {fmt(tau)}; "
        f"{n_cand} candidate repairs were scored and {n_acc} accepted."
    ]
    for h in report["accepted"]:
        phrase = _HYPOTHESIS_PHRASES[h["kind"]](h)
        parts.append(f"Accepted: {phrase}.")
    grounding = {
        "tick": tick,
        "epsilon": eps,
        "tau": tau,
        "candidates": n_cand,
        "accepted_count": n_acc,
        "accepted": report["accepted"],
    }
    return Explanation(ExplanationKind.REFLECTION_SUMMARY, " ".join(parts), grounding)


# ---------------------------------------------------------------------------
# Prompt bundle and the optional LLM path
# ---------------------------------------------------------------------------

SYSTEM_PREAMBLE = (
    "You are narrating one tick of a logged causal simulation. The facts block "
    "below is the complete and only source of truth."
)
INSTRUCTION = (
    "Write a short plain-language explanation of what the model predicted and why. "
    "Every number you mention must appear verbatim in the facts block; do not "
    "introduce any quantity, cause, or event not present in the facts."
)


@dataclass(frozen=True)
class PromptBundle:
    system_preamble: str
    facts: dict[str, Any]
    instruction: str

    def flatten(self) -> str:
        return f"{self.system_preamble}\n\nFACTS:\n{canonical_json(self.facts)}\n\n{self.instruction}"


def render_prompt(record: TraceRecord, report: dict[str, Any] | None = None) -> PromptBundle:
    facts: dict[str, Any] = {"record": record_to_dict(record)}
    if report is not None:
        facts["report"] = report
    return PromptBundle(system_preamble=SYSTEM_PREAMBLE, facts=facts, instruction=INSTRUCTION)


def llm_configured() -> bool:
    return bool(os.environ.get(ENV_LLM_URL))


def narrate_via_llm(bundle: PromptBundle, max_tokens: int = 256, timeout: float = 10.0) -> str:
    """POST the bundle to the configured endpoint; only called explicitly.

    The endpoint contract is JSON in, JSON out: {"prompt", "max_tokens"}
    -> {"text"}.  Raises :class:`ConfigError` when no endpoint is
    configured and :class:`InputError` on a malformed response.
    """
    url = os.environ.get(ENV_LLM_URL)
    if not url:
        raise ConfigError(f"{ENV_LLM_URL} is not set; the template backend is the only path")
    import requests

    headers = {}
    key = os.environ.get(ENV_LLM_KEY)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    resp = requests.post(
        url,
        json={"prompt": bundle.flatten(), "max_tokens": max_tokens},
        headers=headers,
        timeout=timeout,
    )
    if resp.status_code != 200:
        raise InputError(f"LLM endpoint returned status {resp.status_code}")
    try:
        text = resp.json()["text"]
    except (ValueError, KeyError) as exc:
        raise InputError(f"LLM endpoint returned malformed payload: {exc}") from exc
    if not isinstance(text, str):
        raise InputError("LLM endpoint 'text' field is not a string")
    return text
