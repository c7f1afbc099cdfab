"""Deterministic edge/fog/cloud federated online-training simulator."""

from .data_stream import Dataset, Frame, Shard, label_of_distance, is_critical, synth_generate
from .fed_protocol import GlobalModel, ModelUpdate, RoundStart, aggregate, decode, encode
from .nn_core import HyperParams, ModelParams, evaluate, init_params, train_local
from .topology import RoundReport, Simulation, TopologyConfig, build

__all__ = [
    "Dataset", "Frame", "Shard", "label_of_distance", "is_critical", "synth_generate",
    "GlobalModel", "ModelUpdate", "RoundStart", "aggregate", "decode", "encode",
    "HyperParams", "ModelParams", "evaluate", "init_params", "train_local",
    "RoundReport", "Simulation", "TopologyConfig", "build",
]
__version__ = "0.1.0"
