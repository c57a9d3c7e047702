"""Deterministic traffic + V2X communication co-simulator.

Three scenarios (ramp merging, intersection crossing, platoon braking) run
under density-parameterized communication regimes, each reduced to a
(maximum hearing range, inter-packet gap) pair.
"""

__version__ = "0.1.0"

from .comms import Protocol, protocol_params
from .kinematics import desired_speed, safe_velocity

__all__ = ["Protocol", "protocol_params", "safe_velocity", "desired_speed", "__version__"]
