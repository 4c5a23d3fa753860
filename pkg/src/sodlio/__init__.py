"""Overlap-guided adaptive sliding-window LiDAR-inertial odometry."""

__version__ = "0.1.0"
