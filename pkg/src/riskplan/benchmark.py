"""Scenario generation, closed-loop episodes, metrics, and sweeps.

Every random choice draws from a named stream derived from
(master seed, trial, role), so single trials reproduce their batch
behavior exactly and sweeps share initial conditions across planners.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace as dc_replace

from . import behavior, safety, seeding, world
from .baselines import (CooperativePlanner, FullInfoPlanner, MdpPlanner,
                        RsbgPlanner)
from .config import FREEWAY, LEFT_TURN, ExperimentConfig
from .driving import DrivingModel
from .planner import RcRsbgPlanner
from .world import (AgentState, ConflictZone, EgoAction, GoalRegion, Lane,
                    RoadLayout, WorldState)

OUTCOME_SUCCESS = "success"
OUTCOME_COLLISION = "collision"
OUTCOME_MAX_TIME = "max_time"
OUTCOME_FAILED = "failed"

_TERMINAL_TO_OUTCOME = {
    world.TERMINAL_GOAL: OUTCOME_SUCCESS,
    world.TERMINAL_COLLISION: OUTCOME_COLLISION,
    world.TERMINAL_MAX_TIME: OUTCOME_MAX_TIME,
}

PLANNERS = {
    "rcrsbg": RcRsbgPlanner,
    "rcrsbg-fullinfo": FullInfoPlanner,
    "rsbg": RsbgPlanner,
    "mdp": MdpPlanner,
    "cooperative": CooperativePlanner,
}

EPISODE_COLUMNS = ("planner", "beta", "trial", "outcome", "steps",
                   "env_steps", "failed")
METRIC_COLUMNS = ("planner", "beta", "trials", "failed", "p_suc", "p_col",
                  "p_max", "t_suc_mean", "beta_star", "t_w")


# ---------------------------------------------------------------------------
# Scenario templates
# ---------------------------------------------------------------------------

def freeway_layout(cfg) -> RoadLayout:
    """Two parallel lanes; ego enters from the right lane, goal is the left."""
    length = 400.0
    w = cfg.lane_width
    right = Lane(0, ((0.0, 0.0), (length, 0.0)), w, left_id=1)
    left = Lane(1, ((0.0, w), (length, w)), w, right_id=0)
    goal = GoalRegion(lane_id=1, s_min=0.0, s_max=length,
                      v_min=cfg.speed_interval[0], v_max=cfg.speed_interval[1])
    return RoadLayout(lanes={0: right, 1: left}, goal=goal)


def _arc_points(cx, cy, radius, theta0, theta1, step=0.05):
    n = max(2, int(abs(theta1 - theta0) / step))
    return [(cx + radius * math.cos(theta0 + (theta1 - theta0) * i / n),
             cy + radius * math.sin(theta0 + (theta1 - theta0) * i / n))
            for i in range(n + 1)]


def left_turn_layout(cfg) -> RoadLayout:
    """Side-road ego route turning left across one main lane into the other.

    Main road along x: lane 10 flows +x (near lane, crossed), lane 11
    flows -x (far lane, merged into).  The ego route is straight
    approach, quarter arc, then the far-lane corridor.
    """
    w = cfg.lane_width
    half_w = 0.5 * w
    y_near = -half_w
    y_far = half_w
    m1 = Lane(10, ((-100.0, y_near), (100.0, y_near)), w)
    m2 = Lane(11, ((100.0, y_far), (-100.0, y_far)), w)

    radius = 8.0
    arc_cx = -radius
    arc_cy = y_far - radius
    approach = [(0.0, arc_cy - 30.0), (0.0, arc_cy)]
    arc = _arc_points(arc_cx, arc_cy, radius, 0.0, 0.5 * math.pi)
    tail = [(-radius, y_far), (-100.0, y_far)]
    pts = approach + arc[1:] + tail[1:]
    ego_lane = Lane(0, tuple(pts), w)

    # numeric conflict intervals from the polyline
    def corridor_interval(y_lo, y_hi):
        s_vals = []
        x_vals = []
        for (x, y), s in zip(ego_lane.points, ego_lane.cum_s):
            if y_lo < y < y_hi:
                s_vals.append(s)
                x_vals.append(x)
        return min(s_vals), max(s_vals), x_vals

    a0, a1, xs = corridor_interval(y_near - half_w, y_near + half_w)
    # near-lane axis positions covered while crossing (lane 10 runs +x)
    b_near = sorted(x + 100.0 for x in (min(xs), max(xs)))
    z_cross = ConflictZone(lane_a=0, a0=a0, a1=a1,
                           lane_b=10, b0=b_near[0], b1=b_near[1], crossing=True)

    m_a0 = None
    for (x, y), s in zip(ego_lane.points, ego_lane.cum_s):
        if y > y_far - half_w:
            m_a0 = s
            m_x0 = x
            break
    m_a1 = ego_lane.length
    z_merge = ConflictZone(lane_a=0, a0=m_a0, a1=m_a1,
                           lane_b=11, b0=100.0 - m_x0, b1=100.0 - (-100.0),
                           crossing=False)

    goal_s = a1 + radius  # comfortably past the intersection, on the far corridor
    goal = GoalRegion(lane_id=0, s_min=goal_s, s_max=ego_lane.length,
                      v_min=cfg.speed_interval[0], v_max=cfg.speed_interval[1])
    return RoadLayout(lanes={0: ego_lane, 10: m1, 11: m2}, goal=goal,
                      conflict_zones=(z_cross, z_merge))


def ego_action_candidates(actions_cfg) -> list:
    out = []
    if actions_cfg.lane_changes:
        out.append(EgoAction(world.LANE_CHANGE_LEFT))
        out.append(EgoAction(world.LANE_CHANGE_RIGHT))
    for a in actions_cfg.accel_values:
        out.append(EgoAction(world.KEEP_LANE_ACCEL, float(a)))
    if actions_cfg.gap_keep:
        out.append(EgoAction(world.GAP_KEEP_IDM))
    return out


def _chain_positions(start_s, n, gaps, length, direction=1):
    """Front-to-back chained positions with bumper gaps."""
    out = [start_s]
    for g in gaps:
        out.append(out[-1] - direction * (length + g))
    return out[:n]


def generate_scenario(exp: ExperimentConfig, trial: int):
    """Initial world state plus hidden truth models for one trial."""
    sc = exp.scenario
    rng = seeding.derive_rng(sc.master_seed, trial, seeding.ROLE_SCENARIO)
    true_space = exp.behavior.true_space()

    for attempt in range(sc.spawn_retry_cap):
        if sc.kind == FREEWAY:
            layout = freeway_layout(sc)
            n = sc.n_other_vehicles
            gaps = [rng.uniform(*sc.gap_interval) for _ in range(n - 1)]
            speeds = [rng.uniform(*sc.speed_interval) for _ in range(n)]
            base = 30.0
            positions = [base]
            for g in gaps:
                positions.append(positions[-1] + sc.vehicle_length + g)
            agents = [None]  # ego placeholder at index 0
            for i, (s, v) in enumerate(zip(positions, speeds)):
                agents.append(AgentState(agent_id=i + 1, lane_id=1, s=s, d=0.0, v=v,
                                         length=sc.vehicle_length,
                                         width=sc.vehicle_width))
            mid = n // 2
            if n >= 2:
                ego_s = 0.5 * (positions[mid - 1] + positions[mid])
            else:
                ego_s = positions[0]
            ego_v = rng.uniform(*sc.speed_interval)
            agents[0] = AgentState(agent_id=0, lane_id=0, s=ego_s, d=0.0, v=ego_v,
                                   length=sc.vehicle_length, width=sc.vehicle_width)
        else:
            layout = left_turn_layout(sc)
            z_cross, z_merge = layout.conflict_zones
            agents = []
            ego_v = rng.uniform(*sc.speed_interval)
            agents.append(AgentState(agent_id=0, lane_id=0, s=0.0, d=0.0, v=ego_v,
                                     length=sc.vehicle_length, width=sc.vehicle_width))
            aid = 1
            for lane_id, zone_b0 in ((10, z_cross.b0), (11, z_merge.b0)):
                lead_off = rng.uniform(*sc.lead_offset_interval)
                s = zone_b0 - lead_off
                for _ in range(sc.n_per_crossing_lane):
                    v = rng.uniform(*sc.speed_interval)
                    agents.append(AgentState(agent_id=aid, lane_id=lane_id, s=s,
                                             d=0.0, v=v, length=sc.vehicle_length,
                                             width=sc.vehicle_width))
                    aid += 1
                    s -= sc.vehicle_length + rng.uniform(*sc.gap_interval)

        state = WorldState(time=0.0, agents=tuple(agents), layout=layout, ego_id=0)
        if not world.ego_collides(state, 0.0):
            break
    else:
        raise RuntimeError(f"could not place agents without overlap in trial {trial}")

    truths = {}
    for a in state.agents:
        if a.agent_id == state.ego_id:
            continue
        stream = seeding.derive_rng(sc.master_seed, trial, seeding.ROLE_TRUTH,
                                    extra=a.agent_id)
        truths[a.agent_id] = behavior.draw_truth_model(
            a.agent_id, true_space, exp.behavior.delta_min_frac,
            exp.behavior.delta_max_frac, rng, stream)
    return state, truths


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class EpisodeRecord:
    planner: str
    beta: float
    trial: int
    outcome: str
    steps: int
    env_steps: int
    failed: bool = False
    error: str = ""
    env_trace: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def row(self) -> dict:
        return {"planner": self.planner, "beta": self.beta, "trial": self.trial,
                "outcome": self.outcome, "steps": self.steps,
                "env_steps": self.env_steps, "failed": int(self.failed)}


def build_model(exp: ExperimentConfig, truths=None, planner_name="rcrsbg") -> DrivingModel:
    hyp_space = exp.behavior.hypothesized_space()
    hypotheses = behavior.partition_hypotheses(hyp_space, exp.behavior.k_hypotheses)
    return DrivingModel(
        config=exp.planner, envelope_cfg=exp.safety.envelope(),
        collision_cfg=exp.safety.collision(), hypotheses=hypotheses,
        hyp_space=hyp_space, ego_candidates=ego_action_candidates(exp.actions),
        reference=exp.behavior.reference(), truth_models=truths,
        cooperative=(planner_name == "cooperative"))


def make_planner(name: str, exp: ExperimentConfig, beta: float | None = None):
    if name not in PLANNERS:
        raise ValueError(f"unknown planner {name!r}")
    cfg = exp.planner
    if beta is not None:
        cfg = dc_replace(cfg, beta=beta)
    return PLANNERS[name](cfg)


def run_episode(exp: ExperimentConfig, planner_name: str, beta: float,
                trial: int, record_diagnostics: bool = True) -> EpisodeRecord:
    """Closed loop: plan, draw an action, step, update beliefs, repeat."""
    sc = exp.scenario
    state, truths = generate_scenario(exp, trial)
    planner = make_planner(planner_name, exp, beta)
    model = build_model(exp, truths, planner_name)
    pcfg = planner.config
    hypotheses = model.hypotheses
    lik_cfg = exp.behavior.likelihood

    planner_rng = seeding.derive_rng(sc.master_seed, trial, seeding.ROLE_PLANNER)
    policy_rng = seeding.derive_rng(sc.master_seed, trial, seeding.ROLE_POLICY)
    belief_rng = seeding.derive_rng(sc.master_seed, trial, seeding.ROLE_BELIEF)

    other_ids = [a.agent_id for a in state.others()]
    beliefs = behavior.uniform_beliefs(other_ids, exp.behavior.k_hypotheses)
    rec = EpisodeRecord(planner=planner_name, beta=beta, trial=trial,
                        outcome=OUTCOME_MAX_TIME, steps=0, env_steps=0)
    env_cfg = exp.safety.envelope()
    idm_fn = lambda st: model.gap_keep_accel(st, st.ego_id)

    try:
        while state.terminal == world.TERMINAL_NONE:
            policy = planner.plan(model, state, beliefs, planner_rng)
            action = policy.sample(policy_rng) if sc.execute_mode == "sample" \
                else policy.mode()
            if record_diagnostics:
                rec.diagnostics.append(_policy_diag(state.time, policy, action))
            commit = pcfg.n_lc_steps if action.kind in (
                world.LANE_CHANGE_LEFT, world.LANE_CHANGE_RIGHT) else 1
            for _ in range(commit):
                other_acts = {j: behavior.simulate_other_agent(truths[j], state, j)
                              for j in other_ids}
                prev = state
                state = world.step(state, action, other_acts, pcfg.tau_a,
                                   collision_margin=exp.safety.collision_margin,
                                   n_lc_steps=pcfg.n_lc_steps,
                                   max_time=sc.max_episode_time, idm_fn=idm_fn)
                env = safety.envelope_indicator(state, env_cfg)
                rec.env_trace.append(env)
                rec.env_steps += env
                rec.steps += 1
                for j in other_ids:
                    beliefs = behavior.belief_update(
                        beliefs, prev, j, other_acts[j].accel, hypotheses,
                        lik_cfg, belief_rng)
                if state.terminal != world.TERMINAL_NONE:
                    break
        rec.outcome = _TERMINAL_TO_OUTCOME[state.terminal]
    except Exception as exc:  # noqa: BLE001 - episode-level fault barrier
        rec.failed = True
        rec.outcome = OUTCOME_FAILED
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _policy_diag(t: float, policy, chosen) -> dict:
    return {
        "t": t,
        "actions": [a.label() for a in policy.actions],
        "probs": policy.probs,
        "q_r": policy.q_r,
        "rho_env": policy.rho_env,
        "rho_col": policy.rho_col,
        "visits": policy.visits,
        "rho_env_exp": policy.rho_env_exp,
        "rho_col_exp": policy.rho_col_exp,
        "expected_return": policy.expected_return,
        "infeasible": policy.infeasible,
        "lambda_env": policy.lambda_env,
        "lambda_col": policy.lambda_col,
        "lambda_trace": policy.lambda_trace,
        "chosen": chosen.label(),
    }


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class MetricsReport:
    planner: str
    beta: float
    trials: int
    failed: int
    p_suc: float
    p_col: float
    p_max: float
    t_suc_mean: float
    beta_star: float
    t_w: float

    def row(self) -> dict:
        d = {k: getattr(self, k) for k in METRIC_COLUMNS}
        return d


def beta_star(records) -> float:
    """Pooled observed envelope violation risk: violation time over total time."""
    valid = [r for r in records if not r.failed]
    if not valid:
        raise ValueError("beta_star needs at least one record")
    total = sum(r.steps for r in valid)
    if total == 0:
        return 0.0
    return sum(r.env_steps for r in valid) / total


def expected_waiting_time(p_suc: float, p_max: float, t_suc: float,
                          t_max: float) -> float:
    """Closed form of the geometric retry series.

    sum_k (t_max*k + t_suc) * p_suc * p_max^k
      = p_suc * (t_suc / (1-p_max) + t_max * p_max / (1-p_max)^2)
    """
    if p_suc == 0.0:
        return 0.0
    if p_max >= 1.0:
        raise ValueError("p_max must be < 1 for the series to converge")
    if math.isnan(t_suc):
        raise ValueError("t_suc required when p_suc > 0")
    q = 1.0 - p_max
    return p_suc * (t_suc / q + t_max * p_max / (q * q))


def compute_metrics(records, exp: ExperimentConfig, planner: str,
                    beta: float) -> MetricsReport:
    tau = exp.planner.tau_a
    valid = [r for r in records if not r.failed]
    n = len(valid)
    if n == 0:
        raise ValueError("no valid episodes to aggregate")
    counts = {OUTCOME_SUCCESS: 0, OUTCOME_COLLISION: 0, OUTCOME_MAX_TIME: 0}
    for r in valid:
        counts[r.outcome] += 1
    p_suc = counts[OUTCOME_SUCCESS] / n
    p_col = counts[OUTCOME_COLLISION] / n
    p_max = counts[OUTCOME_MAX_TIME] / n
    suc_times = [r.steps * tau for r in valid if r.outcome == OUTCOME_SUCCESS]
    t_suc = sum(suc_times) / len(suc_times) if suc_times else float("nan")
    t_w = expected_waiting_time(p_suc, p_max, t_suc, exp.scenario.max_episode_time) \
        if p_suc > 0.0 else 0.0
    return MetricsReport(planner=planner, beta=beta, trials=n,
                         failed=len(records) - n, p_suc=p_suc, p_col=p_col,
                         p_max=p_max, t_suc_mean=t_suc,
                         beta_star=beta_star(records), t_w=t_w)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _trial_task(args):
    exp_dict, planner_name, beta, trial, diag = args
    from .config import config_from_dict
    exp = config_from_dict(exp_dict)
    return run_episode(exp, planner_name, beta, trial, record_diagnostics=diag)


def run_sweep(exp: ExperimentConfig, betas=None, planners=None, jobs: int = 1,
              record_diagnostics: bool = True, progress=None):
    """Run every (planner, beta, trial) cell; identical trials across cells.

    Returns records ordered by (planner, beta, trial).
    """
    from .config import config_to_dict
    betas = list(betas if betas is not None else exp.sweep.betas)
    planners = list(planners if planners is not None else exp.sweep.planners)
    tasks = [(planner, beta, trial)
             for planner in planners for beta in betas
             for trial in range(exp.scenario.trials)]
    records = []
    if jobs <= 1:
        for planner, beta, trial in tasks:
            records.append(run_episode(exp, planner, beta, trial,
                                       record_diagnostics))
            if progress:
                progress(records[-1])
    else:
        exp_dict = config_to_dict(exp)
        args = [(exp_dict, p, b, t, record_diagnostics) for p, b, t in tasks]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rec in pool.map(_trial_task, args):
                records.append(rec)
                if progress:
                    progress(rec)
    records.sort(key=lambda r: (r.planner, r.beta, r.trial))
    return records


def sweep_metrics(records, exp: ExperimentConfig):
    cells = {}
    for r in records:
        cells.setdefault((r.planner, r.beta), []).append(r)
    out = []
    for (planner, beta) in sorted(cells):
        out.append(compute_metrics(cells[(planner, beta)], exp, planner, beta))
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def write_episodes_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EPISODE_COLUMNS)
        writer.writeheader()
        for r in records:
            writer.writerow(r.row())


def read_episodes_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EPISODE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"episodes csv missing columns: {sorted(missing)}")
        for i, row in enumerate(reader):
            try:
                rows.append(EpisodeRecord(
                    planner=row["planner"], beta=float(row["beta"]),
                    trial=int(row["trial"]), outcome=row["outcome"],
                    steps=int(row["steps"]), env_steps=int(row["env_steps"]),
                    failed=bool(int(row["failed"]))))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"malformed episodes csv at row {i + 2}: {exc}") from exc
    return rows


def write_metrics_csv(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for rep in reports:
            writer.writerow(rep.row())


def write_diagnostics(dirpath, records):
    os.makedirs(dirpath, exist_ok=True)
    for r in records:
        if not r.diagnostics:
            continue
        name = f"{r.planner}-beta{r.beta:g}-trial{r.trial:03d}.json"
        payload = {"schema": "riskplan-diagnostics/1", "planner": r.planner,
                   "beta": r.beta, "trial": r.trial, "outcome": r.outcome,
                   "steps": r.diagnostics}
        with open(os.path.join(dirpath, name), "w") as fh:
            json.dump(payload, fh, indent=1)
