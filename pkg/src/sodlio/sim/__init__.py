"""Synthetic worlds, trajectories and sensor streams with ground truth."""
from .dataset import Dataset, simulate, write_dataset
from .scenarios import SCENARIOS, Scenario, scenario
from .sensors import LidarModel, imu_stream, scan
from .trajectory import Segment, TrajectorySpec, ground_truth
from .world import Patch, World, box_patches

__all__ = ["Dataset", "simulate", "write_dataset", "SCENARIOS", "Scenario", "scenario", "LidarModel", "imu_stream", "scan",
           "Segment", "TrajectorySpec", "ground_truth", "Patch", "World", "box_patches"]
