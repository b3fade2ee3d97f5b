"""Deterministic traffic world.

Road geometry (lanes as arclength-parameterized polylines, conflict
zones between crossing lanes), agent kinematics (longitudinal point
mass per lane, linear lateral interpolation during lane changes), ego
macro-actions, and the joint-action transition function.

States are values: `step` returns a new `WorldState` and never mutates
its input, so states can be shared freely across search workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

# Physical action bounds shared by all agents [m/s^2].
ACCEL_MIN = -5.0
ACCEL_MAX = 5.0

# Lane-change duration in micro steps (1.0 s at tau_a = 0.2 s).
DEFAULT_LANE_CHANGE_STEPS = 5

TERMINAL_NONE = "none"
TERMINAL_COLLISION = "collision"
TERMINAL_GOAL = "goal_reached"
TERMINAL_MAX_TIME = "max_time"


class ContractViolation(ValueError):
    """A caller broke an operation precondition."""


class InvalidActionError(ValueError):
    """Macro action not applicable in the given state."""


# ---------------------------------------------------------------------------
# Road geometry
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class Lane:
    """Arclength-parameterized lane centerline.

    `points` is a polyline in meters; consecutive points must be
    distinct (strictly increasing arclength).  Straight two-point lanes
    get a closed-form pose fast path.
    """

    lane_id: int
    points: tuple  # ((x, y), ...)
    width: float
    left_id: int | None = None
    right_id: int | None = None
    # filled in __post_init__
    cum_s: tuple = field(default=())
    length: float = 0.0
    _straight: bool = False
    _base: tuple = (0.0, 0.0)
    _dir: tuple = (1.0, 0.0)

    def __post_init__(self):
        if len(self.points) < 2:
            raise ContractViolation("lane polyline needs at least 2 points")
        cum = [0.0]
        for (x0, y0), (x1, y1) in zip(self.points, self.points[1:]):
            seg = math.hypot(x1 - x0, y1 - y0)
            if seg <= 0.0:
                raise ContractViolation("lane polyline must strictly increase in arclength")
            cum.append(cum[-1] + seg)
        self.cum_s = tuple(cum)
        self.length = cum[-1]
        if len(self.points) == 2:
            (x0, y0), (x1, y1) = self.points
            self._straight = True
            self._base = (x0, y0)
            self._dir = ((x1 - x0) / self.length, (y1 - y0) / self.length)

    def pose(self, s: float, d: float = 0.0) -> tuple:
        """World pose (x, y, heading) at arclength s, lateral offset d (left-positive)."""
        if self._straight:
            bx, by = self._base
            dx, dy = self._dir
            # left normal of (dx, dy) is (-dy, dx)
            return (bx + s * dx - d * dy, by + s * dy + d * dx, math.atan2(dy, dx))
        s = min(max(s, 0.0), self.length)
        # binary search over cumulative arclength
        lo, hi = 0, len(self.cum_s) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.cum_s[mid] <= s:
                lo = mid
            else:
                hi = mid
        x0, y0 = self.points[lo]
        x1, y1 = self.points[hi]
        seg = self.cum_s[hi] - self.cum_s[lo]
        u = (s - self.cum_s[lo]) / seg
        dx = (x1 - x0) / seg
        dy = (y1 - y0) / seg
        return (x0 + u * (x1 - x0) - d * dy, y0 + u * (y1 - y0) + d * dx,
                math.atan2(dy, dx))


@dataclass(slots=True)
class ConflictZone:
    """Linear mapping between overlapping corridors of two lanes.

    Arclength interval [a0, a1] on lane_a maps onto [b0, b1] on lane_b.
    `crossing` zones end (traffic that cleared them is no longer in
    conflict); merge zones behave like a shared lane forever after.
    """

    lane_a: int
    a0: float
    a1: float
    lane_b: int
    b0: float
    b1: float
    crossing: bool = True

    def map_a_to_b(self, s: float) -> float:
        if s <= self.a0:
            return self.b0 - (self.a0 - s)
        if s >= self.a1:
            return self.b1 + (s - self.a1)
        return self.b0 + (s - self.a0) * (self.b1 - self.b0) / (self.a1 - self.a0)


@dataclass(slots=True)
class GoalRegion:
    lane_id: int
    s_min: float
    s_max: float
    v_min: float
    v_max: float


@dataclass(slots=True)
class RoadLayout:
    lanes: dict  # lane_id -> Lane
    goal: GoalRegion
    conflict_zones: tuple = ()

    def __post_init__(self):
        for lane in self.lanes.values():
            if lane.left_id is not None:
                left = self.lanes.get(lane.left_id)
                if left is None or left.right_id != lane.lane_id:
                    raise ContractViolation("lane adjacency must be symmetric")
            if lane.right_id is not None:
                right = self.lanes.get(lane.right_id)
                if right is None or right.left_id != lane.lane_id:
                    raise ContractViolation("lane adjacency must be symmetric")


# ---------------------------------------------------------------------------
# Agents and state
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class AgentState:
    """Kinematic state of one agent.

    Treated as immutable after construction.  `lane_id` is the target
    lane during a lane change; `lc_progress` runs 0 -> 1 while `d`
    interpolates from the source-lane offset to 0.
    """

    agent_id: int
    lane_id: int
    s: float
    d: float
    v: float
    lc_progress: float = 1.0
    lc_source: int | None = None
    length: float = 5.0
    width: float = 2.0

    @property
    def changing_lane(self) -> bool:
        return self.lc_progress < 1.0


@dataclass(slots=True)
class WorldState:
    """Joint environment state at one instant; immutable by convention."""

    time: float
    agents: tuple  # (AgentState, ...)
    layout: RoadLayout
    ego_id: int
    terminal: str = TERMINAL_NONE

    def agent(self, agent_id: int) -> AgentState:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)

    @property
    def ego(self) -> AgentState:
        return self.agent(self.ego_id)

    def others(self) -> tuple:
        return tuple(a for a in self.agents if a.agent_id != self.ego_id)


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------

LANE_CHANGE_LEFT = "lane_change_left"
LANE_CHANGE_RIGHT = "lane_change_right"
KEEP_LANE_ACCEL = "keep_lane_accel"
GAP_KEEP_IDM = "gap_keep_idm"


@dataclass(frozen=True, slots=True)
class EgoAction:
    """Ego macro-action: lane change, constant-acceleration keep, or IDM gap keep."""

    kind: str
    accel: float = 0.0

    def label(self) -> str:
        if self.kind == KEEP_LANE_ACCEL:
            return f"accel{self.accel:+g}"
        return {LANE_CHANGE_LEFT: "lane_left", LANE_CHANGE_RIGHT: "lane_right",
                GAP_KEEP_IDM: "gap_keep"}.get(self.kind, self.kind)


@dataclass(frozen=True, slots=True)
class OtherAction:
    """Continuous longitudinal acceleration; others keep their lane."""

    accel: float


def valid_ego_actions(state: WorldState, candidates) -> list:
    """Filter macro-actions applicable for the ego in `state`.

    Lane changes need an adjacent lane and no change already running.
    """
    ego = state.ego
    lane = state.layout.lanes[ego.lane_id]
    out = []
    for act in candidates:
        if act.kind == LANE_CHANGE_LEFT:
            if ego.changing_lane or lane.left_id is None:
                continue
        elif act.kind == LANE_CHANGE_RIGHT:
            if ego.changing_lane or lane.right_id is None:
                continue
        out.append(act)
    return out


# ---------------------------------------------------------------------------
# Kinematics helpers
# ---------------------------------------------------------------------------

def advance_longitudinal(s: float, v: float, accel: float, dt: float) -> tuple:
    """Constant-acceleration advance with the v >= 0 clamp.

    Returns (s', v').  If braking reaches standstill mid-interval the
    vehicle stays stopped for the remainder.
    """
    v1 = v + accel * dt
    if v1 >= 0.0:
        return (s + v * dt + 0.5 * accel * dt * dt, v1)
    if v <= 0.0 or accel >= 0.0:
        return (s, 0.0)
    t_stop = -v / accel
    return (s + 0.5 * v * t_stop, 0.0)


def _advance_agent(agent: AgentState, accel: float, lane_width: float,
                   n_lc_steps: int, dt: float) -> AgentState:
    s1, v1 = advance_longitudinal(agent.s, agent.v, accel, dt)
    if agent.lc_progress < 1.0:
        prog = min(1.0, agent.lc_progress + 1.0 / n_lc_steps)
        if prog >= 1.0:
            return replace(agent, s=s1, v=v1, d=0.0, lc_progress=1.0, lc_source=None)
        step_d = lane_width / n_lc_steps
        d1 = agent.d - math.copysign(min(abs(agent.d), step_d), agent.d)
        return replace(agent, s=s1, v=v1, d=d1, lc_progress=prog)
    return replace(agent, s=s1, v=v1)


def start_lane_change(agent: AgentState, layout: RoadLayout, direction: str) -> AgentState:
    """Re-anchor the agent onto the adjacent lane with full lateral offset."""
    lane = layout.lanes[agent.lane_id]
    target_id = lane.left_id if direction == LANE_CHANGE_LEFT else lane.right_id
    if target_id is None:
        raise InvalidActionError(f"no adjacent lane for {direction} from lane {agent.lane_id}")
    if agent.changing_lane:
        raise InvalidActionError("lane change already in progress")
    target = layout.lanes[target_id]
    # source centerline sits right of the target for a left change (left-positive d)
    d0 = -target.width if direction == LANE_CHANGE_LEFT else target.width
    return replace(agent, lane_id=target_id, d=d0, lc_progress=0.0,
                   lc_source=agent.lane_id)


# ---------------------------------------------------------------------------
# Occupancy, leaders, followers
# ---------------------------------------------------------------------------

def occupied_corridors(state: WorldState, agent: AgentState) -> list:
    """(lane_id, s) corridor positions this agent occupies.

    Own lane always; the source lane during a change; plus the mapped
    position on a conflicting lane while the footprint is inside a
    conflict zone of its lane.
    """
    out = [(agent.lane_id, agent.s)]
    if agent.lc_source is not None:
        out.append((agent.lc_source, agent.s))
    half = 0.5 * agent.length
    for z in state.layout.conflict_zones:
        if z.lane_a == agent.lane_id and agent.s + half > z.a0 and agent.s - half < z.a1:
            out.append((z.lane_b, z.map_a_to_b(agent.s)))
    return out


def leader_on_lane(state: WorldState, lane_id: int, s: float,
                   exclude_id: int) -> tuple | None:
    """Nearest agent ahead on a lane corridor: (bumper gap, leader speed, leader id)."""
    best = None
    for a in state.agents:
        if a.agent_id == exclude_id:
            continue
        for (lid, sa) in occupied_corridors(state, a):
            if lid == lane_id and sa > s:
                if best is None or sa < best[0]:
                    best = (sa, a)
    if best is None:
        return None
    sa, a = best
    me = state.agent(exclude_id)
    gap = (sa - 0.5 * a.length) - (s + 0.5 * me.length)
    return (gap, a.v, a.agent_id)


def follower_on_lane(state: WorldState, lane_id: int, s: float,
                     exclude_id: int) -> tuple | None:
    """Nearest agent behind on a lane corridor: (bumper gap, follower speed, id)."""
    best = None
    for a in state.agents:
        if a.agent_id == exclude_id:
            continue
        for (lid, sa) in occupied_corridors(state, a):
            if lid == lane_id and sa <= s:
                if best is None or sa > best[0]:
                    best = (sa, a)
    if best is None:
        return None
    sa, a = best
    me = state.agent(exclude_id)
    gap = (s - 0.5 * me.length) - (sa + 0.5 * a.length)
    return (gap, a.v, a.agent_id)


# ---------------------------------------------------------------------------
# Collision geometry
# ---------------------------------------------------------------------------

def agent_rect(state: WorldState, agent: AgentState, inflate: float = 0.0) -> tuple:
    """Oriented rectangle (cx, cy, cos_h, sin_h, half_len, half_wid)."""
    lane = state.layout.lanes[agent.lane_id]
    x, y, heading = lane.pose(agent.s, agent.d)
    return (x, y, math.cos(heading), math.sin(heading),
            0.5 * agent.length + inflate, 0.5 * agent.width + inflate)


def rects_overlap(r1: tuple, r2: tuple) -> bool:
    """Separating-axis test for two oriented rectangles."""
    x1, y1, c1, s1, hl1, hw1 = r1
    x2, y2, c2, s2, hl2, hw2 = r2
    dx = x2 - x1
    dy = y2 - y1
    # cheap prefilter on bounding circles
    rc = hl1 + hw1 + hl2 + hw2
    if dx * dx + dy * dy > rc * rc:
        return False
    axes = ((c1, s1, hl1), (-s1, c1, hw1), (c2, s2, hl2), (-s2, c2, hw2))
    for ax, ay, _ in axes:
        c = abs(dx * ax + dy * ay)
        e1 = hl1 * abs(ax * c1 + ay * s1) + hw1 * abs(-ax * s1 + ay * c1)
        e2 = hl2 * abs(ax * c2 + ay * s2) + hw2 * abs(-ax * s2 + ay * c2)
        if c > e1 + e2:
            return False
    return True


def ego_collides(state: WorldState, margin: float) -> bool:
    """Any other agent overlapping the ego rectangle inflated by `margin`."""
    ego_rect = agent_rect(state, state.ego, inflate=margin)
    for a in state.agents:
        if a.agent_id == state.ego_id:
            continue
        if rects_overlap(ego_rect, agent_rect(state, a)):
            return True
    return False


# ---------------------------------------------------------------------------
# Transition
# ---------------------------------------------------------------------------

def ego_accel_for_action(state: WorldState, action: EgoAction, idm_fn=None) -> float:
    """Longitudinal acceleration implied by a macro-action in `state`.

    `idm_fn(state) -> accel` must be supplied for gap_keep_idm (the
    behavior module provides one bound to reference parameters).
    """
    if action.kind == KEEP_LANE_ACCEL:
        return action.accel
    if action.kind in (LANE_CHANGE_LEFT, LANE_CHANGE_RIGHT):
        return 0.0  # lane changes hold speed
    if action.kind == GAP_KEEP_IDM:
        if idm_fn is None:
            raise ContractViolation("gap_keep_idm requires an idm_fn")
        return idm_fn(state)
    raise InvalidActionError(f"unknown ego action kind {action.kind!r}")


def check_goal(state: WorldState, ego: AgentState) -> bool:
    g = state.layout.goal
    return (ego.lane_id == g.lane_id and not ego.changing_lane
            and g.s_min <= ego.s <= g.s_max and g.v_min <= ego.v <= g.v_max)


def step(state: WorldState, ego_action: EgoAction, other_actions: dict,
         tau_a: float, *, collision_margin: float = 0.5,
         n_lc_steps: int = DEFAULT_LANE_CHANGE_STEPS, max_time: float | None = None,
         idm_fn=None) -> WorldState:
    """Advance the world by one micro step of duration tau_a.

    `other_actions` maps every non-ego agent id to an OtherAction.
    Deterministic: identical inputs give bit-identical outputs.
    """
    if state.terminal != TERMINAL_NONE:
        raise ContractViolation("step on a terminal state")
    for a in state.agents:
        if a.agent_id != state.ego_id and a.agent_id not in other_actions:
            raise ContractViolation(f"missing action for agent {a.agent_id}")

    ego = state.ego
    if ego_action.kind in (LANE_CHANGE_LEFT, LANE_CHANGE_RIGHT) and not ego.changing_lane:
        ego = start_lane_change(ego, state.layout, ego_action.kind)
    ego_accel = ego_accel_for_action(state, ego_action, idm_fn=idm_fn)

    new_agents = []
    for a in state.agents:
        if a.agent_id == state.ego_id:
            lane_w = state.layout.lanes[ego.lane_id].width
            new_agents.append(_advance_agent(ego, ego_accel, lane_w, n_lc_steps, tau_a))
        else:
            acc = min(max(other_actions[a.agent_id].accel, ACCEL_MIN), ACCEL_MAX)
            lane_w = state.layout.lanes[a.lane_id].width
            new_agents.append(_advance_agent(a, acc, lane_w, n_lc_steps, tau_a))

    new_state = WorldState(time=state.time + tau_a, agents=tuple(new_agents),
                           layout=state.layout, ego_id=state.ego_id)
    # collision beats goal when both fire in the same step
    if ego_collides(new_state, collision_margin):
        new_state.terminal = TERMINAL_COLLISION
    elif check_goal(new_state, new_state.ego):
        new_state.terminal = TERMINAL_GOAL
    elif max_time is not None and new_state.time >= max_time - 1e-9:
        new_state.terminal = TERMINAL_MAX_TIME
    return new_state


def ego_macro_rollforward(state: WorldState, action: EgoAction, tau_a: float,
                          other_accels: dict | None = None, *,
                          n_lc_steps: int = DEFAULT_LANE_CHANGE_STEPS,
                          idm_fn=None) -> list:
    """Execute one macro-action to completion; returns the ego sub-trajectory.

    Lane changes span `n_lc_steps` micro steps, everything else one.
    Other agents hold zero acceleration unless `other_accels` is given.
    """
    acts = valid_ego_actions(state, [action])
    if not acts:
        raise InvalidActionError(f"action {action} invalid in state")
    steps = n_lc_steps if action.kind in (LANE_CHANGE_LEFT, LANE_CHANGE_RIGHT) else 1
    others = {a.agent_id: OtherAction(0.0) for a in state.others()}
    if other_accels:
        others.update({j: OtherAction(v) for j, v in other_accels.items()})
    traj = []
    cur = state
    for _ in range(steps):
        cur = step(cur, action, others, tau_a, n_lc_steps=n_lc_steps, idm_fn=idm_fn)
        traj.append(cur.ego)
        if cur.terminal != TERMINAL_NONE:
            break
    return traj
