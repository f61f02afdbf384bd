"""Simulation and TRPO training for in-hand tool pivoting with a parallel gripper."""

__version__ = "0.1.0"
