"""Driver behavior models and belief tracking.

The Intelligent Driver Model drives both the simulated (hidden) policy
of other agents and the hypothesized policies the planner reasons
about.  Simulated agents own a 5-D parameter box resampled every step;
inference uses a 1-D headway space partitioned into equal hypotheses
with Bayesian posterior tracking from observed accelerations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import world
from .world import WorldState

IDM_DIMS = ("v_desired", "T_desired", "s_min", "a_factor", "b_comft")

ACCEL_FLOOR = -5.0  # shared hard braking limit [m/s^2]


class DegenerateGapError(ValueError):
    """Leader present with non-positive gap; caller must brake instead."""


@dataclass(frozen=True, slots=True)
class IdmParameters:
    """IDM parameter vector; all entries strictly positive."""

    v_desired: float
    T_desired: float
    s_min: float
    a_factor: float
    b_comft: float

    def __post_init__(self):
        for name in IDM_DIMS:
            if getattr(self, name) <= 0.0:
                raise ValueError(f"IDM parameter {name} must be > 0")


def idm_acceleration(params: IdmParameters, v: float, gap: float | None = None,
                     leader_v: float | None = None) -> float:
    """IDM acceleration [m/s^2], clamped to [-5, a_factor].

    Free-road law when gap is None; otherwise the interaction term with
    desired gap s* = s_min + v*T + v*dv / (2*sqrt(a*b)).
    """
    if v < 0.0:
        raise ValueError("speed must be >= 0")
    free = 1.0 - (v / params.v_desired) ** 4
    if gap is None:
        acc = params.a_factor * free
    else:
        if gap <= 0.0:
            raise DegenerateGapError("non-positive gap with leader present")
        dv = v - (leader_v if leader_v is not None else 0.0)
        s_star = params.s_min + v * params.T_desired \
            + v * dv / (2.0 * math.sqrt(params.a_factor * params.b_comft))
        if s_star < 0.0:
            s_star = 0.0  # a much faster leader cannot create a negative gap demand
        ratio = s_star / gap
        acc = params.a_factor * (free - ratio * ratio)
    return min(max(acc, ACCEL_FLOOR), params.a_factor)


def idm_acceleration_batch(v: float, gap: float | None, leader_v: float,
                           v_desired, T_desired, s_min, a_factor, b_comft):
    """Vectorized IDM over parameter arrays (used by the likelihood estimator).

    Mirrors `idm_acceleration` exactly; kept in sync by tests.
    """
    free = 1.0 - (v / v_desired) ** 4
    if gap is None:
        acc = a_factor * free
    else:
        dv = v - leader_v
        s_star = s_min + v * T_desired + v * dv / (2.0 * np.sqrt(a_factor * b_comft))
        s_star = np.maximum(s_star, 0.0)
        acc = a_factor * (free - (s_star / gap) ** 2)
    return np.minimum(np.maximum(acc, ACCEL_FLOOR), a_factor)


# ---------------------------------------------------------------------------
# Behavior spaces
# ---------------------------------------------------------------------------

TRUE_5D = "true_5d"
HYPOTHESIZED_1D = "hypothesized_1d_headway"


@dataclass(frozen=True, slots=True)
class BehaviorSpace:
    """Bounded box of admissible IDM parameters.

    The hypothesized 1-D variant varies only T_desired; the remaining
    four dimensions are pinned to the reference values.
    """

    kind: str
    bounds: tuple  # ((name, lo, hi), ...) in IDM_DIMS order for true_5d
    reference: IdmParameters | None = None

    def __post_init__(self):
        for name, lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError(f"bounds for {name} must satisfy lo < hi")
        if self.kind == HYPOTHESIZED_1D:
            names = [b[0] for b in self.bounds]
            if names != ["T_desired"]:
                raise ValueError("hypothesized 1-D space must vary exactly T_desired")
            if self.reference is None:
                raise ValueError("hypothesized space needs reference parameters")


def default_true_space(bounds: dict | None = None) -> BehaviorSpace:
    b = {
        "v_desired": (8.3, 13.9),
        "T_desired": (0.5, 3.0),
        "s_min": (1.0, 3.0),
        "a_factor": (1.0, 2.5),
        "b_comft": (1.0, 3.0),
    }
    if bounds:
        b.update(bounds)
    return BehaviorSpace(TRUE_5D, tuple((n,) + tuple(b[n]) for n in IDM_DIMS))


def reference_params(true_space: BehaviorSpace) -> IdmParameters:
    """Midpoint of every true-space dimension."""
    mids = {name: 0.5 * (lo + hi) for name, lo, hi in true_space.bounds}
    return IdmParameters(**mids)


def default_hypothesized_space(headway_bounds=(0.5, 3.0),
                               reference: IdmParameters | None = None) -> BehaviorSpace:
    ref = reference if reference is not None else reference_params(default_true_space())
    return BehaviorSpace(HYPOTHESIZED_1D, (("T_desired",) + tuple(headway_bounds),),
                         reference=ref)


# ---------------------------------------------------------------------------
# Hidden truth models
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class AgentTruthModel:
    """Hidden per-agent parameter box; one interval per IDM dimension."""

    agent_id: int
    intervals: tuple  # ((lo, hi) per IDM_DIMS)
    rng: np.random.Generator

    def __hash__(self):
        return hash((self.agent_id, self.intervals))


def draw_truth_model(agent_id: int, space: BehaviorSpace, delta_min_frac: float,
                     delta_max_frac: float, draw_rng: np.random.Generator,
                     stream_rng: np.random.Generator) -> AgentTruthModel:
    """Sample the hidden behavior box inside the true space.

    Interval widths are uniform in [delta_min, delta_max] (fractions of
    each dimension's full width); placement uniform inside the bounds.
    `draw_rng` determines the box, `stream_rng` becomes the agent's
    private per-step sampling stream.
    """
    if space.kind != TRUE_5D:
        raise ValueError("truth models are drawn from the true 5-D space")
    ivals = []
    for (_, lo, hi) in space.bounds:
        full = hi - lo
        width = draw_rng.uniform(delta_min_frac * full, delta_max_frac * full)
        start = draw_rng.uniform(lo, hi - width)
        ivals.append((start, start + width))
    return AgentTruthModel(agent_id=agent_id, intervals=tuple(ivals), rng=stream_rng)


def sample_truth_state(model: AgentTruthModel,
                       rng: np.random.Generator | None = None) -> IdmParameters:
    """Draw one behavior state uniformly from the hidden box.

    Uses the model's private stream unless an explicit rng is given
    (planners with privileged access must not consume the simulation
    stream).
    """
    gen = rng if rng is not None else model.rng
    vals = [gen.uniform(lo, hi) if hi > lo else lo for (lo, hi) in model.intervals]
    return IdmParameters(*vals)


# ---------------------------------------------------------------------------
# Leader context and simulated actions
# ---------------------------------------------------------------------------

def leader_context(state: WorldState, agent_id: int) -> tuple:
    """(speed, gap, leader speed) for an agent; gap/leader None on free road."""
    agent = state.agent(agent_id)
    lead = world.leader_on_lane(state, agent.lane_id, agent.s, agent_id)
    if lead is None:
        return (agent.v, None, None)
    gap, v_lead, _ = lead
    return (agent.v, gap, v_lead)


def idm_action_for_context(params: IdmParameters, v: float, gap, leader_v) -> float:
    """IDM acceleration with the emergency-braking guard for degenerate gaps."""
    if gap is not None and gap <= 0.0:
        return ACCEL_FLOOR
    return idm_acceleration(params, v, gap, leader_v)


def simulate_other_agent(truth: AgentTruthModel, state: WorldState, agent_id: int,
                         rng: np.random.Generator | None = None) -> world.OtherAction:
    """One simulation action: resample the behavior state, apply the IDM."""
    params = sample_truth_state(truth, rng)
    v, gap, leader_v = leader_context(state, agent_id)
    return world.OtherAction(idm_action_for_context(params, v, gap, leader_v))


# ---------------------------------------------------------------------------
# Hypotheses
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class BehaviorHypothesis:
    """One equal-width slice of the hypothesized headway interval."""

    index: int
    headway_lo: float
    headway_hi: float
    reference: IdmParameters

    def params_for_headway(self, headway: float) -> IdmParameters:
        return replace(self.reference, T_desired=headway)

    def sample_params(self, rng: np.random.Generator) -> IdmParameters:
        return self.params_for_headway(rng.uniform(self.headway_lo, self.headway_hi))

    def sample_action(self, v: float, gap, leader_v, rng: np.random.Generator) -> float:
        return idm_action_for_context(self.sample_params(rng), v, gap, leader_v)


def partition_hypotheses(space: BehaviorSpace, k: int) -> list:
    """K equal-width disjoint intervals covering the hypothesized space exactly."""
    if space.kind != HYPOTHESIZED_1D:
        raise ValueError("partitioning applies to the hypothesized 1-D space")
    if k < 1:
        raise world.ContractViolation("K must be >= 1")
    _, lo, hi = space.bounds[0]
    edges = [lo + (hi - lo) * i / k for i in range(k + 1)]
    edges[-1] = hi  # exact upper edge
    return [BehaviorHypothesis(i, edges[i], edges[i + 1], space.reference)
            for i in range(k)]


# ---------------------------------------------------------------------------
# Likelihoods and beliefs
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class LikelihoodConfig:
    n_samples: int = 100
    bin_width: float = 0.25
    floor: float = 1e-6


def hypothesis_action_likelihood(hyp: BehaviorHypothesis, v: float, gap, leader_v,
                                 observed_accel: float, cfg: LikelihoodConfig,
                                 rng: np.random.Generator) -> float:
    """Monte Carlo binned density of the observed acceleration under one hypothesis.

    Draws headways uniformly from the partition, maps them through the
    IDM for the given context, and estimates the density of the
    observed acceleration's bin.  Floored so posteriors never hit zero.
    """
    headways = rng.uniform(hyp.headway_lo, hyp.headway_hi, size=cfg.n_samples)
    ref = hyp.reference
    if gap is not None and gap <= 0.0:
        accels = np.full(cfg.n_samples, ACCEL_FLOOR)
    else:
        accels = idm_acceleration_batch(
            v, gap, leader_v if leader_v is not None else 0.0,
            ref.v_desired, headways, ref.s_min, ref.a_factor, ref.b_comft)
    w = cfg.bin_width
    obs_bin = math.floor(observed_accel / w)
    count = int(np.count_nonzero(np.floor(accels / w) == obs_bin))
    return max(count / (cfg.n_samples * w), cfg.floor)


@dataclass(frozen=True, slots=True)
class BeliefState:
    """Per-agent posterior over the K hypotheses."""

    probs: dict  # agent_id -> tuple of K probabilities

    def vector(self, agent_id: int) -> tuple:
        return self.probs[agent_id]


def uniform_beliefs(agent_ids, k: int) -> BeliefState:
    vec = tuple(1.0 / k for _ in range(k))
    return BeliefState(probs={j: vec for j in agent_ids})


def posterior_from_likelihoods(prior, likelihoods) -> tuple:
    """Bayes rule with renormalization."""
    post = [p * l for p, l in zip(prior, likelihoods)]
    total = sum(post)
    return tuple(p / total for p in post)


def belief_update(belief: BeliefState, state_before: WorldState, agent_id: int,
                  observed_accel: float, hypotheses, cfg: LikelihoodConfig,
                  rng: np.random.Generator) -> BeliefState:
    """Posterior update for one agent from its observed acceleration.

    Agents without a leading vehicle are not updated: a free-road IDM
    action carries no headway information.
    """
    v, gap, leader_v = leader_context(state_before, agent_id)
    if gap is None:
        return belief
    liks = [hypothesis_action_likelihood(h, v, gap, leader_v, observed_accel, cfg, rng)
            for h in hypotheses]
    post = posterior_from_likelihoods(belief.vector(agent_id), liks)
    probs = dict(belief.probs)
    probs[agent_id] = post
    return BeliefState(probs=probs)


def sample_hypothesis_index(belief: BeliefState, agent_id: int,
                            rng: np.random.Generator) -> int:
    vec = belief.vector(agent_id)
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(vec):
        acc += p
        if u < acc:
            return i
    return len(vec) - 1
