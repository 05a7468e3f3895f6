"""GNSS/IMU factor-graph localization with lever-arm self-calibration."""
from .factors import moving_baseline_residual, position_residual
from .graph import FactorGraph, Prior, build_graph, check_gaps
from .init import gyro_bias_init, initial_position, triad_init
from .poses import dji_rtk_compose, estimate_poses, predict_intermediate, sensor_poses
from .preint import PreintegratedImu, imu_residual, preintegrate
from .solver import (BatchResult, Estimate, OnlineResult, SolveReport, graph_cost, initial_estimate,
                     solve_batch, solve_fixed_lag)
from .types import (FIX_RTK, FIX_SBAS, Calibration, DegenerateTriadError, EstimatorError, GapError,
                    GnssPositions, ImuMeasurements, MotionDetectedError, MovingBaselines, NavState,
                    NoiseConfig)

__all__ = [
    "BatchResult", "Calibration", "DegenerateTriadError", "Estimate", "EstimatorError", "FIX_RTK",
    "FIX_SBAS", "FactorGraph", "GapError", "GnssPositions", "ImuMeasurements", "MotionDetectedError",
    "MovingBaselines", "NavState", "NoiseConfig", "OnlineResult", "PreintegratedImu", "Prior",
    "SolveReport", "build_graph", "check_gaps", "dji_rtk_compose", "estimate_poses", "graph_cost",
    "gyro_bias_init", "imu_residual", "initial_estimate", "initial_position", "moving_baseline_residual",
    "position_residual", "predict_intermediate", "preintegrate", "sensor_poses", "solve_batch",
    "solve_fixed_lag", "triad_init",
]
