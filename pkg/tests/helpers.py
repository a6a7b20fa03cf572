"""Shared fixtures: seeded random scenario/graph builders.

Random graphs keep state->state feedback tame (tanh form, small
coefficients) so long episodes stay bounded; action-sourced edges may
use any form.
"""

from __future__ import annotations

import numpy as np

from causalloop.scenario import ScenarioConfig
from causalloop.world import CausalEdge, CausalGraph, Form, VarRef


def random_graph(
    rng: np.random.Generator,
    d_state: int,
    d_action: int,
    max_edges: int = 6,
    max_delay: int = 4,
) -> CausalGraph:
    candidates = []
    for i in range(d_action):
        for j in range(d_state):
            candidates.append((VarRef.action(i), j))
    for i in range(d_state):
        for j in range(d_state):
            candidates.append((VarRef.state(i), j))
    n = int(rng.integers(1, max_edges + 1))
    picks = rng.choice(len(candidates), size=min(n, len(candidates)), replace=False)
    edges = []
    seen = set()
    for p in picks:
        source, target = candidates[int(p)]
        delay = int(rng.integers(1, max_delay + 1))
        if (source, target, delay) in seen:
            continue
        seen.add((source, target, delay))
        if source.kind.value == "state":
            # bounded form + small gain: keeps feedback loops stable
            form = Form.TANH
            coef = float(rng.uniform(-0.4, 0.4))
        else:
            form = Form(rng.choice([f.value for f in Form]))
            coef = float(rng.uniform(-1.2, 1.2))
        if coef == 0.0:
            coef = 0.1
        edges.append(CausalEdge(source, target, delay=delay, coefficient=coef, form=form))
    return CausalGraph(d_state=d_state, d_action=d_action, edges=tuple(edges))


def random_scenario(seed: int, noise_sigma: float = 0.0, name: str = "rand") -> ScenarioConfig:
    rng = np.random.default_rng(seed)
    d_state = int(rng.integers(1, 5))
    d_action = int(rng.integers(1, 3))
    graph = random_graph(rng, d_state, d_action)
    initial = tuple(float(x) for x in rng.uniform(-1.0, 1.0, size=d_state))
    return ScenarioConfig(
        name=f"{name}_{seed}",
        d_state=d_state,
        d_action=d_action,
        initial_state=initial,
        graph=graph,
        noise_sigma=noise_sigma,
    )
