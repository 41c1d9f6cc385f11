"""Socially compliant navigation on semantic grids.

Modules: grid_world (maps, distance fields), planner (road graph, A*, expert
trajectories), pedestrians, policy (conditional flow matching), rewards,
safe_grpo, metrics, benchmark, report, config and cli.
"""

__version__ = "0.1.0"
