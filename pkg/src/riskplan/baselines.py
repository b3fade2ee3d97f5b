"""Baseline planners sharing the MCTS machinery.

All baselines are single-objective: risk awareness enters through a
shaped step reward instead of explicit constraints, so they return
pure actions (argmax of root visit counts).
"""

from __future__ import annotations

from dataclasses import dataclass

from .behavior import sample_hypothesis_index
from .planner import (COST_NEG_RETURN, COST_RISK, EGO_LAGRANGIAN, EGO_UCB,
                      OTHER_COOP, OTHER_WORST, MctsEngine, PlannerConfig,
                      StochasticPolicy, solve_root_policy)


@dataclass(slots=True)
class ShapedRewardConfig:
    """Weights of the risk-shaped step reward used by the baselines."""

    w_goal: float = 0.1
    w_env: float = 0.1
    w_col: float = 1.0

    def __post_init__(self):
        if min(self.w_goal, self.w_env, self.w_col) < 0:
            raise ValueError("shaped-reward weights must be nonnegative")


@dataclass(slots=True)
class CooperationConfig:
    factor: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.factor <= 1.0:
            raise ValueError("cooperation factor must lie in [0, 1]")


def shaped_reward(env: int, col: int, goal: int, tau_predict: float,
                  beta: float, t_plan: float,
                  cfg: ShapedRewardConfig | None = None) -> float:
    """Per-step shaped reward for the single-objective baselines.

    The envelope penalty integrates predicted violation time against
    the allowed budget beta * t_plan, so a fully violating prediction
    erases the goal reward.
    """
    if beta <= 0.0:
        raise ValueError("shaped reward requires beta > 0")
    cfg = cfg or ShapedRewardConfig()
    return (cfg.w_goal * goal
            - cfg.w_env * (env * tau_predict) / (beta * t_plan)
            - cfg.w_col * col)


def _argmax_visits_policy(root, engine) -> StochasticPolicy:
    """Point mass on the most-visited root action (value tie-break)."""
    visited = [(a, st) for a, st in root.ego.items() if st[0] > 0]
    if not visited:
        raise ValueError("no visited root actions")
    best_a, best_st = max(visited, key=lambda kv: (kv[1][0], kv[1][1]))
    return StochasticPolicy(
        actions=[best_a], probs=[1.0], q_r=[best_st[1]],
        rho_env=[best_st[2]], rho_col=[best_st[3]], visits=[best_st[0]],
        rho_env_exp=best_st[2], rho_col_exp=best_st[3],
        expected_return=best_st[1])


def _shaped_fn(config: PlannerConfig, shaped_cfg: ShapedRewardConfig):
    beta = config.beta
    t_plan = config.t_plan

    def fn(outcome, tau):
        return shaped_reward(outcome.env, outcome.col, outcome.goal, tau,
                             beta, t_plan, shaped_cfg)
    return fn


class RsbgPlanner:
    """Belief-sampled hypotheses, worst-case others on the shaped ego reward."""

    name = "rsbg"

    def __init__(self, config: PlannerConfig, shaped: ShapedRewardConfig | None = None):
        self.config = config
        self.shaped = shaped or ShapedRewardConfig()

    def plan(self, model, root_state, beliefs, rng) -> StochasticPolicy:
        def sources(gen):
            return {j: ("hyp", sample_hypothesis_index(beliefs, j, gen))
                    for j in model.other_ids(root_state)}

        engine = MctsEngine(model, self.config, rng, ego_mode=EGO_UCB,
                            other_mode=OTHER_WORST, cost_mode=COST_NEG_RETURN,
                            reward_fn=_shaped_fn(self.config, self.shaped),
                            sample_sources=sources)
        root = engine.search(root_state)
        return _argmax_visits_policy(root, engine)


class MdpPlanner:
    """No beliefs: others sampled from the full hypothesized behavior space."""

    name = "mdp"

    def __init__(self, config: PlannerConfig, shaped: ShapedRewardConfig | None = None):
        self.config = config
        self.shaped = shaped or ShapedRewardConfig()

    def plan(self, model, root_state, beliefs, rng) -> StochasticPolicy:
        def sources(gen):
            return {j: ("full",) for j in model.other_ids(root_state)}

        engine = MctsEngine(model, self.config, rng, ego_mode=EGO_UCB,
                            other_mode=OTHER_WORST, cost_mode=COST_NEG_RETURN,
                            reward_fn=_shaped_fn(self.config, self.shaped),
                            sample_sources=sources)
        root = engine.search(root_state)
        return _argmax_visits_policy(root, engine)


class CooperativePlanner:
    """All agents optimize a cooperation-weighted global shaped reward."""

    name = "cooperative"

    def __init__(self, config: PlannerConfig, shaped: ShapedRewardConfig | None = None,
                 cooperation: CooperationConfig | None = None):
        self.config = config
        self.shaped = shaped or ShapedRewardConfig()
        self.cooperation = cooperation or CooperationConfig()

    def plan(self, model, root_state, beliefs, rng) -> StochasticPolicy:
        model.cooperation_factor = self.cooperation.factor
        beta = self.config.beta
        t_plan = self.config.t_plan
        shaped_cfg = self.shaped

        def ego_fn(outcome, tau):
            return shaped_reward(outcome.env, outcome.col, outcome.goal, tau,
                                 beta, t_plan, shaped_cfg)

        def agent_fn(outcome, tau):
            out = {}
            for (aid, env, col, goal) in (outcome.agent_indicators or ()):
                out[aid] = shaped_reward(env, col, goal, tau, beta, t_plan,
                                         shaped_cfg)
            return out

        engine = MctsEngine(model, self.config, rng, ego_mode=EGO_UCB,
                            other_mode=OTHER_COOP, reward_fn=ego_fn,
                            agent_reward_fn=agent_fn)
        root = engine.search(root_state)
        return _argmax_visits_policy(root, engine)


class FullInfoPlanner:
    """Risk-constrained planner with privileged access to the true behavior
    models of other agents (test and benchmark mode only)."""

    name = "rcrsbg-fullinfo"

    def __init__(self, config: PlannerConfig):
        self.config = config

    def plan(self, model, root_state, beliefs, rng) -> StochasticPolicy:
        def sources(gen):
            return {j: ("truth",) for j in model.other_ids(root_state)}

        engine = MctsEngine(model, self.config, rng, ego_mode=EGO_LAGRANGIAN,
                            other_mode=OTHER_WORST, cost_mode=COST_RISK,
                            sample_sources=sources)
        root = engine.search(root_state)
        policy = solve_root_policy(root, engine.lag, self.config)
        policy.lambda_trace = engine.lambda_trace
        return policy
