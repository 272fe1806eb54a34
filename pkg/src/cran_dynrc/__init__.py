"""Joint dynamic RRH clustering and cooperative beamforming for downlink
C-RANs with computing-resource constraints, plus a Monte-Carlo experiment
harness."""

__version__ = "0.1.0"

from .linkmodel import BeamformerSet, ClusterAssignment, UtilityWeights  # noqa: F401
from .netgen import ChannelState, NetworkLayout, Scenario, UserDrop  # noqa: F401
