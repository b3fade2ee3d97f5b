"""Risk-constrained multi-agent Monte Carlo tree search.

One engine drives all planner variants.  Agents select actions
stage-wise: the ego from its discrete macro-actions (Lagrangian
combined value or plain UCB), other agents from continuous atoms via
progressive widening with worst-case selection, or UCB over macro
actions in the cooperative variant.  Per-iteration suffix violation
durations update per-action risk estimates as running ratio means; the
root policy comes from a small linear program over the equal-valued
action set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .risk import StageOutcome


@dataclass(slots=True)
class PlannerConfig:
    """Search and constraint parameters shared by all planner variants."""

    beta: float = 0.2
    iterations: int = 20000
    d_max: int = 10
    tau_a: float = 0.2
    k_hypotheses: int = 16
    gamma: float = 0.95
    ucb_c: float = 2.0
    k_pw: float = 4.0
    alpha_pw: float = 0.25
    c_tol: float = 1.0
    eps_lp: float = 1e-9
    eps_col: float = 0.01
    lambda_max: float = 100.0
    alpha0: float = 1.0
    n_lc_steps: int = 5
    t_plan: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.t_plan is None:
            # stage d spans d micro steps, so the horizon covers
            # tau_a * (1 + 2 + ... + d_max) seconds of prediction
            self.t_plan = self.tau_a * self.d_max * (self.d_max + 1) / 2.0


@dataclass(slots=True)
class LagrangeState:
    """Dual variables for the envelope and collision constraints."""

    lambda_env: float = 0.0
    lambda_col: float = 0.0
    n: int = 0
    alpha0: float = 1.0
    lambda_max: float = 100.0

    @property
    def step_size(self) -> float:
        return self.alpha0 / (1.0 + self.n * self.alpha0)


def lagrange_step(lag: LagrangeState, rho_env_exp: float, rho_col_exp: float,
                  beta: float, col_target: float = 0.0) -> LagrangeState:
    """One projected gradient step on the multipliers."""
    a = lag.step_size
    env = min(max(lag.lambda_env + a * (rho_env_exp - beta), 0.0), lag.lambda_max)
    col = min(max(lag.lambda_col + a * (rho_col_exp - col_target), 0.0), lag.lambda_max)
    return LagrangeState(lambda_env=env, lambda_col=col, n=lag.n + 1,
                         alpha0=lag.alpha0, lambda_max=lag.lambda_max)


@dataclass(slots=True)
class StochasticPolicy:
    """Distribution over ego macro-actions with per-action diagnostics."""

    actions: list
    probs: list
    q_r: list
    rho_env: list
    rho_col: list
    visits: list
    rho_env_exp: float
    rho_col_exp: float
    expected_return: float
    infeasible: bool = False
    lambda_env: float = 0.0
    lambda_col: float = 0.0
    lambda_trace: list = field(default_factory=list)

    def sample(self, rng):
        u = rng.random()
        acc = 0.0
        for a, p in zip(self.actions, self.probs):
            acc += p
            if u < acc:
                return a
        return self.actions[-1]

    def mode(self):
        best = max(range(len(self.actions)), key=lambda i: self.probs[i])
        return self.actions[best]


# ---------------------------------------------------------------------------
# Search tree
# ---------------------------------------------------------------------------

class _OtherStats:
    """Continuous-atom statistics for one other agent at one node."""

    __slots__ = ("atoms", "order")

    def __init__(self):
        self.atoms = {}   # atom -> [N, Q_cost]
        self.order = []   # insertion order for deterministic argmax


class _Node:
    __slots__ = ("state", "depth", "valid_actions", "visits", "ego", "others",
                 "children", "outcome")

    def __init__(self, state, depth, valid_actions):
        self.state = state
        self.depth = depth
        self.valid_actions = valid_actions
        self.visits = 0
        self.ego = {}      # action -> [N, Q, rho_env, rho_col]
        self.others = {}   # agent id -> _OtherStats
        self.children = {} # (ego action, atoms tuple) -> (_Node, StageOutcome)
        self.outcome = None


# ---------------------------------------------------------------------------
# Root policy linear program
# ---------------------------------------------------------------------------

def equal_valued_set(actions, stats, lam: LagrangeState, c_tol: float):
    """Actions within a count-based tolerance of the maximal combined value.

    tolerance(a) = c_tol * (observed return range) / sqrt(N(a)).
    """
    q_lambda = {}
    q_values = []
    for a in actions:
        n, q, re, rc = stats[a]
        q_lambda[a] = q - lam.lambda_env * re - lam.lambda_col * rc
        q_values.append(q)
    q_range = max(q_values) - min(q_values)
    best = max(q_lambda.values())
    out = []
    for a in actions:
        n = stats[a][0]
        tol = c_tol * q_range / math.sqrt(n)
        if q_lambda[a] >= best - tol - 1e-12:
            out.append(a)
    return out, q_lambda


def _lp_over_support(acts, q_r, rho_e, rho_c, beta, eps_col, eps_lp):
    """Maximize return over the simplex subject to both risk caps.

    Exact vertex enumeration: optimal basic solutions mix at most three
    actions (one per active constraint plus the simplex equality).
    Returns (probs, value) or None when infeasible.
    """
    n = len(acts)
    best = None

    def consider(idx, probs):
        nonlocal best
        re = sum(p * rho_e[i] for i, p in zip(idx, probs))
        rc = sum(p * rho_c[i] for i, p in zip(idx, probs))
        if re > beta + eps_lp or rc > eps_col + eps_lp:
            return
        val = sum(p * q_r[i] for i, p in zip(idx, probs))
        if best is None or val > best[0] + 1e-15:
            full = [0.0] * n
            for i, p in zip(idx, probs):
                full[i] += p
            best = (val, full)

    all_singles_ok = True
    for i in range(n):
        if rho_e[i] > beta + eps_lp or rho_c[i] > eps_col + eps_lp:
            all_singles_ok = False
        consider((i,), (1.0,))
    if all_singles_ok:
        # the whole simplex is feasible, so a vertex (single action) is optimal
        return best
    for i in range(n):
        for j in range(i + 1, n):
            for target, rho in ((beta, rho_e), (eps_col, rho_c)):
                den = rho[i] - rho[j]
                if den == 0.0:
                    continue
                pi = (target - rho[j]) / den
                if 0.0 <= pi <= 1.0:
                    consider((i, j), (pi, 1.0 - pi))
    if n >= 3:
        for i in range(n):
            for j in range(i + 1, n):
                for k in range(j + 1, n):
                    # both constraints tight plus the simplex equality
                    a11, a12, a13 = rho_e[i], rho_e[j], rho_e[k]
                    a21, a22, a23 = rho_c[i], rho_c[j], rho_c[k]
                    det = (a11 * (a22 - a23) - a12 * (a21 - a23)
                           + a13 * (a21 - a22))
                    if abs(det) < 1e-14:
                        continue
                    b1 = beta
                    b2 = eps_col
                    pi = (b1 * (a22 - a23) - a12 * (b2 - a23) + a13 * (b2 - a22)) / det
                    pj = (a11 * (b2 - a23) - b1 * (a21 - a23) + a13 * (a21 - b2)) / det
                    pk = 1.0 - pi - pj
                    if pi >= -1e-12 and pj >= -1e-12 and pk >= -1e-12:
                        consider((i, j, k), (max(pi, 0.0), max(pj, 0.0), max(pk, 0.0)))
    return best


def solve_root_policy(node: _Node, lam: LagrangeState, config: PlannerConfig) -> StochasticPolicy:
    """Equal-valued action set plus the stochastic-policy linear program.

    Falls back to the single action minimizing the multiplier-weighted
    risk when no feasible mixture exists; the fallback is flagged.
    """
    visited = [a for a in node.valid_actions if a in node.ego and node.ego[a][0] > 0]
    if not visited:
        raise ValueError("root policy requires at least one visited action")
    a_star, q_lambda = equal_valued_set(visited, node.ego, lam, config.c_tol)
    q_r = [node.ego[a][1] for a in a_star]
    rho_e = [node.ego[a][2] for a in a_star]
    rho_c = [node.ego[a][3] for a in a_star]
    sol = _lp_over_support(a_star, q_r, rho_e, rho_c,
                           config.beta, config.eps_col, config.eps_lp)
    if sol is not None:
        _, probs = sol
        acts = a_star
        infeasible = False
    else:
        # safest visited action under the current multiplier weighting
        def weighted_risk(a):
            _, _, re, rc = node.ego[a]
            return (lam.lambda_env * re + lam.lambda_col * rc, re + rc)

        fallback = min(visited, key=weighted_risk)
        acts = [fallback]
        probs = [1.0]
        infeasible = True

    stats = [node.ego[a] for a in acts]
    exp_re = sum(p * s[2] for p, s in zip(probs, stats))
    exp_rc = sum(p * s[3] for p, s in zip(probs, stats))
    exp_q = sum(p * s[1] for p, s in zip(probs, stats))
    if not infeasible:
        assert exp_re <= config.beta + config.eps_lp + 1e-12
        assert exp_rc <= config.eps_col + config.eps_lp + 1e-12
    return StochasticPolicy(
        actions=list(acts), probs=list(probs),
        q_r=[s[1] for s in stats], rho_env=[s[2] for s in stats],
        rho_col=[s[3] for s in stats], visits=[s[0] for s in stats],
        rho_env_exp=exp_re, rho_col_exp=exp_rc, expected_return=exp_q,
        infeasible=infeasible, lambda_env=lam.lambda_env, lambda_col=lam.lambda_col)


def greedy_action(node: _Node, q_lambda: dict):
    return max(q_lambda.items(), key=lambda kv: kv[1])[0]


# ---------------------------------------------------------------------------
# Selection rules (exposed for direct testing)
# ---------------------------------------------------------------------------

def ego_ucb_select(valid_actions, stats, node_visits, ucb_c, rng,
                   lam: LagrangeState | None = None):
    """In-tree ego selection: combined value plus exploration bonus.

    Unvisited actions are expanded first (uniformly at random).
    """
    unvisited = [a for a in valid_actions if a not in stats or stats[a][0] == 0]
    if unvisited:
        return unvisited[int(rng.integers(len(unvisited)))]
    log_n = math.log(max(node_visits, 1))
    best_a = None
    best_v = -math.inf
    for a in valid_actions:
        n, q, re, rc = stats[a]
        val = q
        if lam is not None:
            val -= lam.lambda_env * re + lam.lambda_col * rc
        val += ucb_c * math.sqrt(log_n / n)
        if val > best_v:
            best_v = val
            best_a = a
    return best_a


def other_worst_case_select(ostats: _OtherStats, node_visits, k_pw, alpha_pw,
                            sampler, rng):
    """Progressive widening with worst-case (max ego cost) selection.

    While the widening budget k_pw * N^alpha_pw admits new atoms, draw
    one from the sampled behavior source; afterwards pick the expanded
    atom with the highest combined ego cost.
    """
    limit = k_pw * node_visits ** alpha_pw
    if not ostats.atoms or len(ostats.atoms) < limit:
        atom = sampler(rng)
        if atom not in ostats.atoms:
            ostats.atoms[atom] = [0, 0.0]
            ostats.order.append(atom)
        return atom
    best_atom = None
    best_key = None
    for atom in ostats.order:
        n, q = ostats.atoms[atom]
        key = (q, -n)
        if best_key is None or key > best_key:
            best_key = key
            best_atom = atom
    return best_atom


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

EGO_LAGRANGIAN = "lagrangian"
EGO_UCB = "ucb"
OTHER_WORST = "worst"
OTHER_COOP = "coop"
COST_RISK = "risk"
COST_NEG_RETURN = "neg_return"


class MctsEngine:
    """Stage-wise MCTS over a planning model.

    The model supplies action sets, atom sampling, and transitions (see
    `DrivingModel` and `risk.ToyGame`); the engine owns statistics,
    selection, Lagrange updates, and backpropagation.
    """

    def __init__(self, model, config: PlannerConfig, rng, *,
                 ego_mode=EGO_LAGRANGIAN, other_mode=OTHER_WORST,
                 atom_source=("belief",), cost_mode=COST_RISK,
                 reward_fn=None, agent_reward_fn=None, beliefs=None,
                 sample_sources=None):
        self.model = model
        self.config = config
        self.rng = rng
        self.ego_mode = ego_mode
        self.other_mode = other_mode
        self.cost_mode = cost_mode
        self.reward_fn = reward_fn if reward_fn is not None \
            else (lambda out, tau: out.reward)
        self.agent_reward_fn = agent_reward_fn
        self.beliefs = beliefs
        self.sample_sources = sample_sources
        self.lag = LagrangeState(alpha0=config.alpha0, lambda_max=config.lambda_max)
        self.lambda_trace = []
        self._sources = {}
        self._gamma_steps = {}

    # -- helpers ------------------------------------------------------------

    def _gamma_pow(self, steps: int) -> float:
        g = self._gamma_steps.get(steps)
        if g is None:
            g = self.config.gamma ** steps
            self._gamma_steps[steps] = g
        return g

    def _draw_sources(self):
        """Per-iteration behavior source for every other agent."""
        if self.sample_sources is not None:
            return self.sample_sources(self.rng)
        return self._sources

    def _select_other(self, node: _Node, agent_id, sources):
        ost = node.others.get(agent_id)
        if ost is None:
            ost = _OtherStats()
            node.others[agent_id] = ost
        if self.other_mode == OTHER_COOP:
            acts = self.model.cooperative_actions(node.state, agent_id)
            stats = {a: ost.atoms[a] for a in acts if a in ost.atoms}
            atom = ego_ucb_select(acts, stats, node.visits, self.config.ucb_c,
                                  self.rng)
            if atom not in ost.atoms:
                ost.atoms[atom] = [0, 0.0]
                ost.order.append(atom)
            return atom
        source = sources[agent_id]
        sampler = lambda rng: self.model.sample_other_action(
            node.state, agent_id, source, rng)
        return other_worst_case_select(ost, node.visits, self.config.k_pw,
                                       self.config.alpha_pw, sampler, self.rng)

    # -- core recursion -------------------------------------------------------

    def _simulate(self, node: _Node, sources):
        """One selection/expansion/rollout pass from `node`.

        Returns the suffix tuple (return, T_env, T_col, T_tot,
        per-agent returns or None) for the sequence starting at this
        node's state.
        """
        cfg = self.config
        state = node.state
        if self.model.is_terminal(state) or node.depth >= cfg.d_max:
            return (0.0, 0.0, 0.0, cfg.tau_a, None)

        lam = self.lag if self.ego_mode == EGO_LAGRANGIAN else None
        ego_a = ego_ucb_select(node.valid_actions, node.ego, node.visits,
                               cfg.ucb_c, self.rng, lam)
        atoms = {}
        for j in self.model.other_ids(state):
            atoms[j] = self._select_other(node, j, sources)
        key = (ego_a, tuple(sorted(atoms.items())))

        child_entry = node.children.get(key)
        if child_entry is None:
            outcome = self.model.transition(state, ego_a, atoms, node.depth)
            child = _Node(outcome.next_state, node.depth + 1,
                          self.model.valid_ego_actions(outcome.next_state))
            node.children[key] = (child, outcome)
            result = self._rollout(outcome.next_state, node.depth + 1, sources)
        else:
            child, outcome = child_entry
            result = self._simulate(child, sources)

        suffix = self._combine(outcome, result)
        self._update(node, ego_a, atoms, suffix)
        return suffix

    def _combine(self, outcome: StageOutcome, child_result):
        """Fold one stage into the child's suffix tuple."""
        cfg = self.config
        tau = outcome.duration_steps * cfg.tau_a
        r_child, te, tc, tt, agents_child = child_result
        r_stage = self.reward_fn(outcome, tau)
        g = self._gamma_pow(outcome.duration_steps)
        total_r = r_stage + g * r_child
        agents = None
        if self.agent_reward_fn is not None:
            stage_agents = self.agent_reward_fn(outcome, tau)
            agents = {}
            for aid, r in stage_agents.items():
                prev = agents_child.get(aid, 0.0) if agents_child else 0.0
                agents[aid] = r + g * prev
        return (total_r, outcome.env * tau + te, outcome.col * tau + tc,
                tau + tt, agents)

    def _rollout(self, state, depth, sources):
        """Random-ego continuation to the horizon; others follow their source."""
        cfg = self.config
        r_total = 0.0
        te = tc = tt = 0.0
        disc = 1.0
        agents_total = {} if self.agent_reward_fn is not None else None
        while not self.model.is_terminal(state) and depth < cfg.d_max:
            valid = self.model.valid_ego_actions(state)
            if not valid:
                break
            ego_a = valid[int(self.rng.integers(len(valid)))]
            atoms = {}
            for j in self.model.other_ids(state):
                if self.other_mode == OTHER_COOP:
                    acts = self.model.cooperative_actions(state, j)
                    atoms[j] = acts[int(self.rng.integers(len(acts)))]
                else:
                    atoms[j] = self.model.sample_other_action(
                        state, j, sources[j], rng=self.rng)
            outcome = self.model.transition(state, ego_a, atoms, depth)
            tau = outcome.duration_steps * cfg.tau_a
            r_total += disc * self.reward_fn(outcome, tau)
            if agents_total is not None:
                for aid, r in self.agent_reward_fn(outcome, tau).items():
                    agents_total[aid] = agents_total.get(aid, 0.0) + disc * r
            disc *= self._gamma_pow(outcome.duration_steps)
            te += outcome.env * tau
            tc += outcome.col * tau
            tt += tau
            state = outcome.next_state
            depth += 1
        return (r_total, te, tc, tt + cfg.tau_a, agents_total)

    def _update(self, node: _Node, ego_a, atoms, suffix):
        r_total, te, tc, tt, agents = suffix
        node.visits += 1
        st = node.ego.get(ego_a)
        if st is None:
            st = [0, 0.0, 0.0, 0.0]
            node.ego[ego_a] = st
        st[0] += 1
        n = st[0]
        ego_value = r_total
        if self.agent_reward_fn is not None and agents is not None:
            ego_value = self._global_value(agents, self.model.ego_agent_id)
        st[1] += (ego_value - st[1]) / n
        st[2] += (te / tt - st[2]) / n
        st[3] += (tc / tt - st[3]) / n

        for j, atom in atoms.items():
            ost = node.others[j]
            rec = ost.atoms[atom]
            rec[0] += 1
            if self.other_mode == OTHER_COOP:
                cost = self._global_value(agents, j) if agents else 0.0
            elif self.cost_mode == COST_RISK:
                cost = self.lag.lambda_env * (te / tt) + self.lag.lambda_col * (tc / tt)
            else:
                cost = -r_total
            rec[1] += (cost - rec[1]) / rec[0]

    def _global_value(self, agents: dict, agent_id) -> float:
        c = getattr(self.model, "cooperation_factor", 0.1)
        own = agents.get(agent_id, 0.0)
        others = [v for aid, v in agents.items() if aid != agent_id]
        if not others:
            return own
        return (1.0 - c) * own + c * (sum(others) / len(others))

    # -- search -------------------------------------------------------------

    def search(self, root_state) -> _Node:
        cfg = self.config
        if self.model.is_terminal(root_state):
            raise ValueError("cannot plan from a terminal state")
        valid = self.model.valid_ego_actions(root_state)
        if not valid:
            raise ValueError("no valid ego actions at the root")
        root = _Node(root_state, 0, valid)
        trace_every = max(1, cfg.iterations // 100)
        for it in range(cfg.iterations):
            if self.ego_mode == EGO_LAGRANGIAN:
                self._lagrange_update(root)
                if it % trace_every == 0:
                    self.lambda_trace.append(
                        (it, self.lag.lambda_env, self.lag.lambda_col))
            sources = self._draw_sources()
            self._simulate(root, sources)
        return root

    def _lagrange_update(self, root: _Node):
        visited = [a for a in root.valid_actions
                   if a in root.ego and root.ego[a][0] > 0]
        if not visited:
            return
        pol = solve_root_policy(root, self.lag, self.config)
        if pol.infeasible:
            # dual signal from the combined-value greedy action, not the
            # safety fallback (which would stall the multipliers at zero)
            _, q_lambda = equal_valued_set(visited, root.ego, self.lag,
                                           self.config.c_tol)
            a = greedy_action(root, q_lambda)
            _, _, re, rc = root.ego[a]
        else:
            re, rc = pol.rho_env_exp, pol.rho_col_exp
        self.lag = lagrange_step(self.lag, re, rc, self.config.beta)


# ---------------------------------------------------------------------------
# Planner front ends
# ---------------------------------------------------------------------------

class RcRsbgPlanner:
    """Risk-constrained planner: belief-sampled hypotheses, dual risk
    statistics, Lagrangian ego selection, stochastic root policy."""

    name = "rcrsbg"

    def __init__(self, config: PlannerConfig):
        self.config = config

    def plan(self, model, root_state, beliefs, rng) -> StochasticPolicy:
        from .behavior import sample_hypothesis_index

        def sources(gen):
            return {j: ("hyp", sample_hypothesis_index(beliefs, j, gen))
                    for j in model.other_ids(root_state)}

        engine = MctsEngine(model, self.config, rng,
                            ego_mode=EGO_LAGRANGIAN, other_mode=OTHER_WORST,
                            cost_mode=COST_RISK, sample_sources=sources)
        root = engine.search(root_state)
        policy = solve_root_policy(root, engine.lag, self.config)
        policy.lambda_trace = engine.lambda_trace
        return policy
