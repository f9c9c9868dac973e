"""shieldsim: a deterministic 2D urban-traffic microsimulator with an
ego-grid observation encoder, a post-posed emergency-brake shield,
rule-based baseline drivers, and a batch evaluation harness."""

__version__ = "0.1.0"

from .config import (IdmParams, IERConfig, RewardParams, ShieldConfig, SimConfig)
from .network import (MapGenParams, RoadNetwork, Route, build_route,
                      generate_map, minimal_map, sample_route, validate_network)
from .observation import (IERObservation, PhantomVehicle, encode, encode_full,
                          first_concealed_patch, incoming_vehicles,
                          inject_phantoms, occupancy_times, time_to_intersection)
from .rules import Approach, has_priority_other, worst_case_arrival
from .rewards import RewardBreakdown, RewardInputs, compute_reward
from .shield import ShieldDecision, braking_distance, shield_decision
from .policies import ACTIONS, make_policy, policy_is_shielded
from .world import (PedestrianState, SpawnError, StepEvents, VehicleState,
                    WorldState, detect_collisions, idm_acceleration,
                    spawn_traffic, step_world)
from .visibility import VisibilityMask, visible_region
from .episode import EpisodeLog, replay_episode, run_episode, verify_log
from .metrics import MetricsSummary, compare, evaluate
