from .integrators import rk4_step
from .waves import SeaState, jonswap_components, jonswap_density
from .ship import (
    ShipParams,
    SimulationDiverged,
    kinematic_matrix,
    pose_rates,
    rigid_body_coriolis,
    damping_force,
    restoring_force,
    wind_force,
    wave_force,
    propulsion_force,
    truth_acceleration,
    operator_controls,
    random_sea_state,
    simulate_ship_episode,
)
from .quad import QuadParams, simulate_quad_episode, hover_speed

__all__ = [
    "rk4_step",
    "SeaState",
    "jonswap_components",
    "jonswap_density",
    "ShipParams",
    "SimulationDiverged",
    "kinematic_matrix",
    "pose_rates",
    "rigid_body_coriolis",
    "damping_force",
    "restoring_force",
    "wind_force",
    "wave_force",
    "propulsion_force",
    "truth_acceleration",
    "operator_controls",
    "random_sea_state",
    "simulate_ship_episode",
    "QuadParams",
    "simulate_quad_episode",
    "hover_speed",
]
