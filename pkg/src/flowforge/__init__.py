"""flowforge: procedural obstacle scenes for channel flows, signed-distance
voxelization, Cartesian resampling, solver-parameter policies, and batched
campaign orchestration, all driven by one hashed configuration."""

__version__ = "0.1.0"
