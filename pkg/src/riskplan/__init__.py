"""riskplan: risk-constrained interactive traffic planning and benchmarking.

A goal-directed stochastic ego policy is searched with multi-agent
MCTS under Bayesian behavior-hypothesis beliefs so that the expected
fraction of driven time violating a longitudinal safety envelope stays
below a chosen risk level while collision risk stays near zero.
"""

from .behavior import (AgentTruthModel, BehaviorHypothesis, BehaviorSpace,
                       BeliefState, IdmParameters, belief_update,
                       idm_acceleration, partition_hypotheses,
                       sample_truth_state, simulate_other_agent,
                       uniform_beliefs)
from .baselines import (CooperationConfig, CooperativePlanner, FullInfoPlanner,
                        MdpPlanner, RsbgPlanner, ShapedRewardConfig,
                        shaped_reward)
from .benchmark import (PLANNERS, EpisodeRecord, MetricsReport, beta_star,
                        compute_metrics, expected_waiting_time,
                        generate_scenario, run_episode, run_sweep)
from .config import (ExperimentConfig, config_from_dict, config_to_dict,
                     default_config, load_config)
from .driving import DrivingModel
from .planner import (LagrangeState, MctsEngine, PlannerConfig, RcRsbgPlanner,
                      StochasticPolicy, lagrange_step, solve_root_policy)
from .risk import (ObservationSequence, RiskPair, ToyGame, brute_force_risk,
                   expected_risk, monte_carlo_risk, sequence_violation_fraction)
from .safety import (CollisionConfig, EnvelopeConfig, collision_indicator,
                     envelope_indicator, safe_distance)
from .world import (AgentState, EgoAction, GoalRegion, Lane, OtherAction,
                    RoadLayout, WorldState, step)

__version__ = "0.1.0"
