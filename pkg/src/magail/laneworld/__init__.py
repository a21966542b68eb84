from .dataset import (Dataset, DimensionError, Trajectory, load_dataset, record_demos, run_expert,
                      save_dataset, track_from_header)
from .expert import AGGRESSIVE, PERSONAS, YIELDING, ExpertState, Persona, expert_action
from .track import TrackSpec
from .world import (ACTION_DIM, EVENTS, FEATURE_DIM, Action, SimulationError, WorldState,
                    features, lane_traffic, reset, step)

__all__ = [
    "Dataset", "DimensionError", "Trajectory", "load_dataset", "record_demos", "run_expert", "save_dataset",
    "track_from_header", "AGGRESSIVE", "PERSONAS", "YIELDING", "ExpertState", "Persona",
    "expert_action", "TrackSpec", "ACTION_DIM", "EVENTS", "FEATURE_DIM", "Action",
    "SimulationError", "WorldState", "features", "lane_traffic", "reset", "step",
]
