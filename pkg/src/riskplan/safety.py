"""Safety-violation indicator functions.

Longitudinal safe-distance envelope (worst-case braking model) applied
to the ego's occupied lane corridors and conflict zones, plus the
inflated-rectangle collision indicator.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import world
from .world import WorldState


@dataclass(slots=True)
class EnvelopeConfig:
    """Safe-distance envelope parameters.

    The ego's response time applies when the ego is the rear vehicle,
    the others' response time when the ego is in front.
    """

    response_time_ego: float = 0.5
    response_time_other: float = 1.0
    decel_limit: float = 5.0

    def __post_init__(self):
        if self.response_time_ego < 0 or self.response_time_other < 0:
            raise ValueError("response times must be >= 0")
        if self.decel_limit <= 0:
            raise ValueError("decel_limit must be > 0")


@dataclass(slots=True)
class CollisionConfig:
    safety_margin: float = 0.5

    def __post_init__(self):
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be >= 0")


def safe_distance(v_rear: float, v_front: float, response_time: float,
                  decel: float) -> float:
    """Worst-case longitudinal safe distance [m].

    Rear vehicle travels response_time at v_rear then brakes at `decel`
    while the front vehicle brakes at the same limit.
    """
    dist = v_rear * response_time + v_rear * v_rear / (2.0 * decel) \
        - v_front * v_front / (2.0 * decel)
    return max(0.0, dist)


def _pair_violates(gap: float, v_rear: float, v_front: float,
                   response_time: float, decel: float) -> bool:
    # gap == safe distance is safe; violation is strict
    return gap < safe_distance(v_rear, v_front, response_time, decel)


def envelope_indicator(state: WorldState, cfg: EnvelopeConfig) -> int:
    """1 iff the ego violates the safe distance to any checked vehicle.

    Checked pairs: leader and follower on every lane corridor the ego
    occupies (current lane, plus the source lane during a change), and
    conflict-zone traffic projected onto a common longitudinal axis.
    """
    ego = state.ego
    half_ego = 0.5 * ego.length

    lanes_checked = set()
    for (lane_id, s) in world.occupied_corridors(state, ego):
        if lane_id in lanes_checked:
            continue
        lanes_checked.add(lane_id)
        lead = world.leader_on_lane(state, lane_id, s, ego.agent_id)
        if lead is not None:
            gap, v_front, _ = lead
            if _pair_violates(gap, ego.v, v_front, cfg.response_time_ego, cfg.decel_limit):
                return 1
        follow = world.follower_on_lane(state, lane_id, s, ego.agent_id)
        if follow is not None:
            gap, v_rear, _ = follow
            if _pair_violates(gap, v_rear, ego.v, cfg.response_time_other, cfg.decel_limit):
                return 1

    # conflict zones on the ego's own lane: project onto the other lane's axis
    for z in state.layout.conflict_zones:
        if z.lane_a != ego.lane_id:
            continue
        if z.crossing and ego.s - half_ego > z.a1:
            continue  # crossing completed
        ego_axis = z.map_a_to_b(ego.s)
        ego_inside = ego.s + half_ego > z.a0 and ego.s - half_ego < z.a1
        if ego_inside:
            continue  # already handled via occupied corridor above
        for other in state.others():
            if other.lane_id != z.lane_b:
                continue
            half_o = 0.5 * other.length
            if z.crossing and other.s - half_o > z.b1:
                continue  # other already cleared the zone
            if other.s > ego_axis:
                # ego approaches a vehicle ahead on the common axis
                gap = (other.s - half_o) - (ego_axis + half_ego)
                if _pair_violates(gap, ego.v, other.v,
                                  cfg.response_time_ego, cfg.decel_limit):
                    return 1
            # ego not inside the zone cannot obstruct traffic behind it:
            # the virtual position ahead of real vehicles is not occupied yet
    return 0


def collision_indicator(state: WorldState, cfg: CollisionConfig) -> int:
    """1 iff any other vehicle overlaps the inflated ego rectangle."""
    return 1 if world.ego_collides(state, cfg.safety_margin) else 0
