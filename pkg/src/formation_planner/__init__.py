"""Formation-flight planning: safe flight corridors, sampled formation guidance,
auction assignment and MPPI trajectory optimisation, plus a seeded simulator."""

from .assignment import Assignment, AssignmentProblem, auction_assign, swap_improvement_check
from .corridor import FormationSafeRegion, Polytope, check_connectivity, contains, generate_sfc
from .formation_front import (FormationConfig, FrontWeights, GuidancePathSet, NoSafeFormationStep,
                              SampleParams, evaluate_fc, formation_targets, plan_formation_paths,
                              sample_center)
from .mppi import (ControlInput, MppiParams, RunningCostParams, Trajectory, UavState, mppi_step,
                   propagate, running_cost, shift_horizon)
from .swarm_sim import EpisodeReport, SwarmConfig, formation_similarity, run_episode
from .world import (DistanceField, OccupancyGrid, ScenarioSpec, build_edt, generate_scenario,
                    query_distance)

__version__ = "0.1.0"
