"""Opponent tracking, trajectory regression, and overtaking on closed tracks."""

from .geometry import (
    FrenetPose,
    LineConfig,
    ReferenceLine,
    TrackModel,
    cart_to_frenet,
    frenet_to_cart,
    load_track,
    make_reference_line,
)
from .gpr import GPKernel, GPModel, OpponentProfile, gp_fit, gp_predict
from .harness import MetricsReport, RunConfig, compute_tracking_metrics, run_scenario, sweep_speed_scaler
from .planner import (
    OvertakeProblem,
    OvertakeTrajectory,
    PlannerConfig,
    build_problem,
    choose_side,
    solve_overtake,
    splice,
    verify_constraints,
)
from .prediction import EgoState, PredictionConfig, RegionOfCollision, compute_roc, select_target
from .sim import AgentSpec, DetectionNoiseModel, World, adjudicate, build_world, step_world, synthesize_detections
from .tracker import (
    Detection,
    KFConfig,
    MultiOpponentTracker,
    TrackedOpponent,
    Tracklet,
    TrackerConfig,
    associate,
    kf_predict,
    kf_update,
    reid,
)

__version__ = "0.1.0"
