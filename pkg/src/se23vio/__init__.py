"""Exact SE_2(3) IMU pre-integration and a synthetic multi-camera VIO testbed."""

__version__ = "0.1.0"
