"""Planning-model adapter over the traffic world.

Bridges the search engine to world kinematics, behavior hypotheses,
and safety indicators.  In-tree stages span several micro steps: the
stage at node depth d covers d+1 steps (lane changes always their
fixed maneuver length), so prediction time grows with depth and the
full tree covers the planning horizon.
"""

from __future__ import annotations

import math
from dataclasses import replace

from . import behavior, safety, world
from .planner import PlannerConfig
from .risk import StageOutcome
from .world import (GAP_KEEP_IDM, KEEP_LANE_ACCEL, LANE_CHANGE_LEFT,
                    LANE_CHANGE_RIGHT, TERMINAL_COLLISION, TERMINAL_GOAL,
                    TERMINAL_NONE, EgoAction, WorldState)


def _min_abs_gap(g0: float, dv: float, da: float, T: float) -> float:
    """Minimum |g| of g(t) = g0 + dv*t + da/2*t^2 over [0, T].

    The extreme values sit at the endpoints or the vertex; a sign
    change anywhere in between means the gap closed completely.
    """
    g_end = g0 + dv * T + 0.5 * da * T * T
    lo = hi = g0
    if g_end < lo:
        lo = g_end
    elif g_end > hi:
        hi = g_end
    if da != 0.0:
        ts = -dv / da
        if 0.0 < ts < T:
            gv = g0 + dv * ts + 0.5 * da * ts * ts
            if gv < lo:
                lo = gv
            elif gv > hi:
                hi = gv
    if lo <= 0.0 <= hi:
        return 0.0
    return min(abs(lo), abs(hi))


def _advance_agent_stage(agent, accel: float, lane_width: float,
                         n_lc_steps: int, steps: int, tau_a: float):
    """Closed-form multi-micro-step advance of one agent."""
    s1, v1 = world.advance_longitudinal(agent.s, agent.v, accel, steps * tau_a)
    if agent.lc_progress < 1.0:
        prog = agent.lc_progress + steps / n_lc_steps
        if prog >= 1.0 - 1e-12:
            return replace(agent, s=s1, v=v1, d=0.0, lc_progress=1.0, lc_source=None)
        shift = steps * lane_width / n_lc_steps
        d1 = agent.d - math.copysign(min(abs(agent.d), shift), agent.d)
        return replace(agent, s=s1, v=v1, d=d1, lc_progress=prog)
    return replace(agent, s=s1, v=v1)


class DrivingModel:
    """Engine-facing view of one traffic scene.

    Holds everything the search needs that is not part of the state:
    hypotheses and behavior spaces, safety configs, the ego macro-action
    candidates, and (for privileged planners) the hidden truth models.
    """

    def __init__(self, config: PlannerConfig, envelope_cfg: safety.EnvelopeConfig,
                 collision_cfg: safety.CollisionConfig, hypotheses,
                 hyp_space: behavior.BehaviorSpace,
                 ego_candidates, reference: behavior.IdmParameters,
                 truth_models: dict | None = None, cooperative: bool = False,
                 cooperation_factor: float = 0.1, shaped_beta: float | None = None):
        self.config = config
        self.envelope_cfg = envelope_cfg
        self.collision_cfg = collision_cfg
        self.hypotheses = hypotheses
        self.hyp_space = hyp_space
        self.ego_candidates = list(ego_candidates)
        self.reference = reference
        self.truth_models = truth_models or {}
        self.cooperative = cooperative
        self.cooperation_factor = cooperation_factor
        self.shaped_beta = shaped_beta
        self.ego_agent_id = None  # bound on first use
        _, self._hw_lo, self._hw_hi = hyp_space.bounds[0]

    # -- protocol -------------------------------------------------------------

    def is_terminal(self, state: WorldState) -> bool:
        return state.terminal != TERMINAL_NONE

    def valid_ego_actions(self, state: WorldState):
        if state.terminal != TERMINAL_NONE:
            return []
        if self.ego_agent_id is None:
            self.ego_agent_id = state.ego_id
        return world.valid_ego_actions(state, self.ego_candidates)

    def other_ids(self, state: WorldState):
        return tuple(a.agent_id for a in state.agents if a.agent_id != state.ego_id)

    def sample_other_action(self, state: WorldState, agent_id, source, rng) -> float:
        v, gap, leader_v = behavior.leader_context(state, agent_id)
        kind = source[0]
        if kind == "hyp":
            return self.hypotheses[source[1]].sample_action(v, gap, leader_v, rng)
        if kind == "full":
            headway = rng.uniform(self._hw_lo, self._hw_hi)
            params = replace(self.reference, T_desired=headway)
            return behavior.idm_action_for_context(params, v, gap, leader_v)
        if kind == "truth":
            params = behavior.sample_truth_state(self.truth_models[agent_id], rng)
            return behavior.idm_action_for_context(params, v, gap, leader_v)
        raise ValueError(f"unknown atom source {source!r}")

    def cooperative_actions(self, state: WorldState, agent_id):
        agent = state.agent(agent_id)
        lane = state.layout.lanes[agent.lane_id]
        out = []
        for act in self.ego_candidates:
            if act.kind == LANE_CHANGE_LEFT and (agent.changing_lane or lane.left_id is None):
                continue
            if act.kind == LANE_CHANGE_RIGHT and (agent.changing_lane or lane.right_id is None):
                continue
            out.append(act)
        return out

    def gap_keep_accel(self, state: WorldState, agent_id) -> float:
        v, gap, leader_v = behavior.leader_context(state, agent_id)
        return behavior.idm_action_for_context(self.reference, v, gap, leader_v)

    def _agent_move(self, state, agent, action):
        """(post-initiation agent, accel) for an ego-style macro or a raw accel."""
        if isinstance(action, EgoAction):
            if action.kind in (LANE_CHANGE_LEFT, LANE_CHANGE_RIGHT):
                if not agent.changing_lane:
                    agent = world.start_lane_change(agent, state.layout, action.kind)
                return agent, 0.0
            if action.kind == GAP_KEEP_IDM:
                return agent, self.gap_keep_accel(state, agent.agent_id)
            return agent, action.accel
        return agent, min(max(action, world.ACCEL_MIN), world.ACCEL_MAX)

    def transition(self, state: WorldState, ego_action: EgoAction, atoms: dict,
                   depth: int) -> StageOutcome:
        cfg = self.config
        lc = ego_action.kind in (LANE_CHANGE_LEFT, LANE_CHANGE_RIGHT)
        steps = cfg.n_lc_steps if lc else depth + 1
        tau_stage = steps * cfg.tau_a

        moves = {}
        for a in state.agents:
            if a.agent_id == state.ego_id:
                moves[a.agent_id] = self._agent_move(state, a, ego_action)
            else:
                moves[a.agent_id] = self._agent_move(state, a, atoms[a.agent_id])

        new_agents = []
        for a in state.agents:
            started, accel = moves[a.agent_id]
            lane_w = state.layout.lanes[started.lane_id].width
            new_agents.append(_advance_agent_stage(started, accel, lane_w,
                                                   cfg.n_lc_steps, steps, cfg.tau_a))
        next_state = WorldState(time=state.time + tau_stage, agents=tuple(new_agents),
                                layout=state.layout, ego_id=state.ego_id)

        collided = self._stage_collision(state, next_state, moves, steps * cfg.tau_a)
        goal = 0
        if collided:
            next_state.terminal = TERMINAL_COLLISION
        elif world.check_goal(next_state, next_state.ego):
            next_state.terminal = TERMINAL_GOAL
            goal = 1
        env = safety.envelope_indicator(next_state, self.envelope_cfg)
        col = 1 if collided else 0

        agent_ind = self._per_agent_indicators(next_state, goal) if self.cooperative else None
        return StageOutcome(next_state=next_state, duration_steps=steps, env=env,
                            col=col, goal=goal, reward=1.0 if goal else 0.0,
                            terminal=next_state.terminal != TERMINAL_NONE,
                            agent_indicators=agent_ind)

    # -- collision sweep ------------------------------------------------------

    def _stage_collision(self, state, next_state, moves, T: float) -> bool:
        margin = self.collision_cfg.safety_margin
        if world.ego_collides(next_state, margin):
            return True
        ego_started, ego_acc = moves[state.ego_id]
        ego1 = next_state.ego
        ego_zones = [z for z in state.layout.conflict_zones
                     if z.lane_a == ego_started.lane_id]
        lat_thresh_base = 0.5 * ego_started.width + margin
        lon_thresh_base = 0.5 * ego_started.length + margin
        for a0 in state.agents:
            if a0.agent_id == state.ego_id:
                continue
            o_started, o_acc = moves[a0.agent_id]
            a1 = next_state.agent(a0.agent_id)
            dv = o_started.v - ego_started.v
            da = o_acc - ego_acc
            # same-corridor longitudinal sweep
            shared = self._shared_lane_lateral(state, next_state, ego_started,
                                               ego1, o_started, a1)
            if shared is not None and shared < lat_thresh_base + 0.5 * a0.width:
                g0 = o_started.s - ego_started.s
                if _min_abs_gap(g0, dv, da, T) < lon_thresh_base + 0.5 * a0.length:
                    return True
            # conflict-zone sweep on the other lane's axis
            for z in ego_zones:
                if a0.lane_id != z.lane_b:
                    continue
                g0 = o_started.s - z.map_a_to_b(ego_started.s)
                if _min_abs_gap(g0, dv, da, T) < lon_thresh_base + 0.5 * a0.length:
                    # require the meeting to happen near the zone itself
                    if self._meets_inside_zone(z, ego_started, ego_acc, o_started,
                                               o_acc, T):
                        return True
        return False

    def _meets_inside_zone(self, z, ego, ego_acc, other, o_acc, T) -> bool:
        # closest approach time of the axis gap
        dv = other.v - ego.v
        da = o_acc - ego_acc
        ts = -dv / da if da != 0.0 else (0.0 if dv > 0 else T)
        ts = min(max(ts, 0.0), T)
        s_e, _ = world.advance_longitudinal(ego.s, ego.v, ego_acc, ts)
        half = 0.5 * ego.length
        return z.a0 - half <= s_e <= z.a1 + half

    def _shared_lane_lateral(self, state, next_state, ego0, ego1, o0, o1):
        """Min lateral distance while sharing a lane, or None when disjoint."""
        lanes_ego = {ego0.lane_id, ego1.lane_id}
        if ego0.lc_source is not None:
            lanes_ego.add(ego0.lc_source)
        if o0.lane_id not in lanes_ego and o1.lane_id not in lanes_ego:
            return None
        # offsets relative to the other agent's lane centerline
        d_start = self._lateral_offset_on_lane(state.layout, ego0, o0.lane_id)
        d_end = self._lateral_offset_on_lane(state.layout, ego1, o1.lane_id)
        vals = [abs(v) for v in (d_start, d_end) if v is not None]
        if not vals:
            return None
        return min(vals)

    @staticmethod
    def _lateral_offset_on_lane(layout, agent, lane_id):
        if agent.lane_id == lane_id:
            return agent.d
        lane = layout.lanes.get(agent.lane_id)
        if lane is None:
            return None
        if lane.left_id == lane_id:
            return agent.d - layout.lanes[lane_id].width
        if lane.right_id == lane_id:
            return agent.d + layout.lanes[lane_id].width
        return None

    # -- cooperative per-agent indicators --------------------------------------

    def _per_agent_indicators(self, state: WorldState, ego_goal: int):
        margin = self.collision_cfg.safety_margin
        out = []
        rects = {a.agent_id: world.agent_rect(state, a, inflate=0.0)
                 for a in state.agents}
        agents = state.agents
        collided = set()
        for i in range(len(agents)):
            for j in range(i + 1, len(agents)):
                ri = agents[i]
                rj = agents[j]
                rect_i = world.agent_rect(state, ri, inflate=margin)
                if world.rects_overlap(rect_i, rects[rj.agent_id]):
                    collided.add(ri.agent_id)
                    collided.add(rj.agent_id)
        for a in agents:
            lead = world.leader_on_lane(state, a.lane_id, a.s, a.agent_id)
            env = 0
            if lead is not None:
                gap, v_front, _ = lead
                if gap < safety.safe_distance(a.v, v_front,
                                              self.envelope_cfg.response_time_other,
                                              self.envelope_cfg.decel_limit):
                    env = 1
            goal = ego_goal if a.agent_id == state.ego_id else 0
            out.append((a.agent_id, env, 1 if a.agent_id in collided else 0, goal))
        return tuple(out)
