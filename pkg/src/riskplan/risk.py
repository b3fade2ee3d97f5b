"""Violation-risk functional and a brute-force oracle on enumerable toy games.

The risk of an observation sequence is the violation time among its
non-initial observations divided by the full sequence duration; the
scenario risk is the expectation over the sequence distribution.  Toy
games make that distribution exactly enumerable, which is what the
planner's correctness tests are anchored to.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np


class SizeError(ValueError):
    """Enumeration would exceed the configured cap."""


@dataclass(frozen=True, slots=True)
class ObservationSequence:
    """Ordered observations ending in a terminal state.

    `probability` is the sequence weight when it comes from an
    enumerated distribution.
    """

    states: tuple
    probability: float | None = None

    def __post_init__(self):
        if len(self.states) < 2:
            raise ValueError("observation sequence needs at least 2 states")


@dataclass(frozen=True, slots=True)
class RiskPair:
    rho_env: float
    rho_col: float

    def __post_init__(self):
        for v in (self.rho_env, self.rho_col):
            if not 0.0 <= v <= 1.0:
                raise ValueError("risk values must lie in [0, 1]")


def sequence_violation_fraction(seq: ObservationSequence, indicator) -> float:
    """Violation-time fraction of one sequence.

    Violations are counted at observations 1 .. len-1 (the initial
    state is excluded) while the denominator is the full length, so the
    result is at most (len-1)/len.
    """
    n = len(seq.states)
    hits = sum(1 for s in seq.states[1:] if indicator(s))
    return hits / n


def expected_risk(sequences, indicator) -> float:
    """Probability-weighted mean violation fraction."""
    total_w = 0.0
    acc = 0.0
    for seq in sequences:
        if seq.probability is None:
            raise ValueError("expected_risk needs weighted sequences")
        if seq.probability < 0.0:
            raise ValueError("sequence weights must be nonnegative")
        total_w += seq.probability
        acc += seq.probability * sequence_violation_fraction(seq, indicator)
    if total_w > 1.0 + 1e-9:
        raise ValueError(f"sequence weights sum to {total_w} > 1")
    return acc


# ---------------------------------------------------------------------------
# Toy games
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ToyOutcome:
    """Per-state annotations of a toy game."""

    env: int = 0
    col: int = 0
    goal: int = 0
    reward: float = 0.0
    terminal: bool = False
    agent_indicators: tuple | None = None  # ((agent, env, col, goal), ...)


@dataclass(slots=True)
class ToyGame:
    """Finite single-opponent stage game for oracle tests.

    Fields:
      root: initial state id
      states: state id -> ToyOutcome
      ego_actions: state id -> list of ego action names
      hypotheses: per-hypothesis action distribution,
          hypotheses[k][state] = [(atom, prob), ...]
      transitions: (state, ego action, atom) -> next state id
      belief: prior over hypotheses
      truth: distribution like one hypotheses[k] entry, used by
          privileged planners (defaults to belief-weighted mixture)
    """

    root: str
    states: dict
    ego_actions: dict
    hypotheses: list
    transitions: dict
    belief: tuple
    truth: dict | None = None
    agent_id: int = 0
    ego_agent_id: str = "ego"
    cooperation_factor: float = 0.1
    horizon_cap: int = 8

    def outcome(self, state) -> ToyOutcome:
        return self.states[state]

    # --- planner-model protocol -------------------------------------------
    def valid_ego_actions(self, state):
        return self.ego_actions.get(state, [])

    def other_ids(self, state):
        return (self.agent_id,)

    def is_terminal(self, state) -> bool:
        return self.states[state].terminal

    def _dist(self, state, source):
        kind = source[0]
        if kind == "hyp":
            return self.hypotheses[source[1]].get(state, [])
        if kind == "truth":
            if self.truth is not None:
                return self.truth.get(state, [])
            mix = {}
            for bk, hyp in zip(self.belief, self.hypotheses):
                for atom, p in hyp.get(state, []):
                    mix[atom] = mix.get(atom, 0.0) + bk * p
            return sorted(mix.items())
        if kind == "full":
            # uniform mixture over hypothesis partitions
            mix = {}
            for hyp in self.hypotheses:
                for atom, p in hyp.get(state, []):
                    mix[atom] = mix.get(atom, 0.0) + p / len(self.hypotheses)
            return sorted(mix.items())
        raise ValueError(f"unknown atom source {source!r}")

    def sample_other_action(self, state, agent_id, source, rng):
        dist = self._dist(state, source)
        u = rng.random()
        acc = 0.0
        for atom, p in dist:
            acc += p
            if u < acc:
                return atom
        return dist[-1][0]

    def transition(self, state, ego_action, other_atoms, depth):
        nxt = self.transitions[(state, ego_action, other_atoms[self.agent_id])]
        out = self.states[nxt]
        return StageOutcome(next_state=nxt, duration_steps=1, env=out.env,
                            col=out.col, goal=out.goal, reward=out.reward,
                            terminal=out.terminal,
                            agent_indicators=out.agent_indicators)

    def cooperative_actions(self, state, agent_id):
        dist = self._dist(state, ("full",))
        return [atom for atom, _ in dist]

    # --- serialization ------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ToyGame":
        states = {}
        for k, v in d["states"].items():
            v = dict(v)
            if v.get("agent_indicators") is not None:
                v["agent_indicators"] = tuple(tuple(x) for x in v["agent_indicators"])
            states[k] = ToyOutcome(**v)
        transitions = {}
        for t in d["transitions"]:
            transitions[(t["state"], t["ego"], t["atom"])] = t["next"]
        hyps = [{s: [tuple(x) for x in dist] for s, dist in h.items()}
                for h in d["hypotheses"]]
        truth = None
        if d.get("truth") is not None:
            truth = {s: [tuple(x) for x in dist] for s, dist in d["truth"].items()}
        return cls(root=d["root"], states=states, ego_actions=d["ego_actions"],
                   hypotheses=hyps, transitions=transitions,
                   belief=tuple(d["belief"]), truth=truth,
                   horizon_cap=d.get("horizon_cap", 8))


def load_toy_game(path) -> ToyGame:
    with open(path) as fh:
        return ToyGame.from_dict(json.load(fh))


@dataclass(frozen=True, slots=True)
class StageOutcome:
    """Result of one stage transition (shared with the planner engine)."""

    next_state: object
    duration_steps: int
    env: int
    col: int
    goal: int
    reward: float
    terminal: bool
    agent_indicators: tuple | None = None  # ((agent, env, col, goal), ...)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class OracleResult:
    rho_env: float
    rho_col: float
    expected_return: float
    per_action: dict = field(default_factory=dict)  # root action -> (q_r, rho_env, rho_col)


def _uniform_policy(game):
    def policy(state, depth):
        acts = game.valid_ego_actions(state)
        return [(a, 1.0 / len(acts)) for a in acts]
    return policy


def brute_force_risk(game: ToyGame, ego_policy=None, horizon: int | None = None,
                     gamma: float = 1.0, max_sequences: int = 500_000) -> OracleResult:
    """Exact risk and return by exhaustive enumeration.

    Sequences are enumerated per joint hypothesis assignment (sampled
    once at the root and held fixed, as the planner does), weighted by
    the belief prior.  Refuses games whose enumeration exceeds
    `max_sequences`.
    """
    horizon = game.horizon_cap if horizon is None else horizon
    if horizon > game.horizon_cap:
        raise SizeError(f"horizon {horizon} exceeds cap {game.horizon_cap}")
    policy = ego_policy if ego_policy is not None else _uniform_policy(game)

    count = 0

    def walk(state, depth, prob, t_env, t_col, disc_return, k):
        nonlocal count
        out = game.states[state]
        if out.terminal or depth == horizon:
            count += 1
            if count > max_sequences:
                raise SizeError("toy game enumeration exceeds sequence cap")
            n_obs = depth + 1
            yield (prob, t_env / n_obs, t_col / n_obs, disc_return)
            return
        for ego_a, p_e in policy(state, depth):
            for atom, p_a in game.hypotheses[k].get(state, []):
                nxt = game.transitions[(state, ego_a, atom)]
                o = game.states[nxt]
                yield from walk(nxt, depth + 1, prob * p_e * p_a,
                                t_env + o.env, t_col + o.col,
                                disc_return + (gamma ** depth) * o.reward, k)

    def accumulate(root_policy):
        rho_e = rho_c = ret = 0.0
        for k, b_k in enumerate(game.belief):
            if b_k == 0.0:
                continue
            for ego_a, p_e in root_policy(game.root):
                for atom, p_a in game.hypotheses[k].get(game.root, []):
                    nxt = game.transitions[(game.root, ego_a, atom)]
                    o = game.states[nxt]
                    for (p, fe, fc, r) in walk(nxt, 1, b_k * p_e * p_a,
                                               o.env, o.col,
                                               o.reward, k):
                        rho_e += p * fe
                        rho_c += p * fc
                        ret += p * r
        return rho_e, rho_c, ret

    # per-root-action values under point-mass root policies
    per_action = {}
    root_actions = game.valid_ego_actions(game.root)
    for a in root_actions:
        rho_e, rho_c, ret = accumulate(lambda s, _a=a: [(_a, 1.0)])
        per_action[a] = (ret, rho_e, rho_c)

    rho_e, rho_c, ret = accumulate(lambda s: policy(s, 0))
    return OracleResult(rho_env=rho_e, rho_col=rho_c, expected_return=ret,
                        per_action=per_action)


def monte_carlo_risk(game: ToyGame, n_rollouts: int, rng: np.random.Generator,
                     ego_policy=None, horizon: int | None = None,
                     gamma: float = 1.0) -> OracleResult:
    """Sampled estimate of the same quantities; independent check route."""
    horizon = game.horizon_cap if horizon is None else horizon
    policy = ego_policy if ego_policy is not None else _uniform_policy(game)
    sums = np.zeros(3)
    for _ in range(n_rollouts):
        u = rng.random()
        acc = 0.0
        k = len(game.belief) - 1
        for i, b in enumerate(game.belief):
            acc += b
            if u < acc:
                k = i
                break
        state = game.root
        t_env = t_col = ret = 0.0
        depth = 0
        while not game.states[state].terminal and depth < horizon:
            acts = policy(state, depth)
            u = rng.random()
            cum = 0.0
            ego_a = acts[-1][0]
            for a, p in acts:
                cum += p
                if u < cum:
                    ego_a = a
                    break
            atom = game.sample_other_action(state, game.agent_id, ("hyp", k), rng)
            state = game.transitions[(state, ego_a, atom)]
            o = game.states[state]
            t_env += o.env
            t_col += o.col
            ret += (gamma ** depth) * o.reward
            depth += 1
        n_obs = depth + 1
        sums += (t_env / n_obs, t_col / n_obs, ret)
    avg = sums / n_rollouts
    return OracleResult(rho_env=avg[0], rho_col=avg[1], expected_return=avg[2])
