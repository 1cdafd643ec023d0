"""PI control of the KL weight in VAE training, with stability analysis."""
from .control import ControllerState, Gains, MovingAverage, pi_step, positional_pi_step, sigmoid, smooth
from .errors import AssumptionError, ConfigError, DivergenceError, IdentificationError
from .plant import PRESETS, ExpMap, PlantModel, estimate_a, fit_exp_map, plant_step
from .schedule import HYBRID, STEP_ONLY, AnnealSchedule, recommend_setpoint, setpoint_at
from .simloop import LoopConfig, PlantSpec, Trajectory, run_closed_loop, tracking_metrics
from .stability import StabilityReport, check_stability, stability_region

__version__ = "0.1.0"
