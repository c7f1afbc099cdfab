"""Edge/fog/cloud round loop.

Edges are pure stream sources: their frames are folded into each fog's shard
when the simulation is built. Fog nodes train on successive windows of their
shard; the cloud aggregates. Every model exchange is encoded to FFL1 bytes,
pushed through an in-process FIFO transport, and decoded on the other side,
so only wire frames ever cross the fog/cloud boundary.

Message flow per round r (global model version r already held by every fog)::

    cloud -> fog_i   RoundStart(r, window_index)
    fog_i -> cloud   ModelUpdate(r, ...)          # after local training
    cloud -> fog_i   GlobalModel(r + 1)           # new global, pushed back

The initial GlobalModel(0) is pushed when the simulation is built.
"""

from __future__ import annotations

import hashlib
import struct
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import fed_protocol as proto
from .data_stream import Dataset, Shard, next_window, partition
from .errors import ConfigError, ExhaustedStreamError, ProtocolError
from .nn_core import DEFAULT_DIMS, HyperParams, ModelParams, evaluate, init_params, train_local

CLOUD = "cloud"


def fog_name(fog_id: int) -> str:
    return f"fog-{fog_id}"


@dataclass(frozen=True)
class TopologyConfig:
    num_fogs: int = 5
    edges_per_fog: int = 1
    rounds: int = 53
    window_size: int = 60
    hyper: HyperParams = field(default_factory=HyperParams)
    seed: int = 0
    workers: int = 1
    dims: tuple[int, int, int] = DEFAULT_DIMS

    def __post_init__(self):
        for name in ("num_fogs", "edges_per_fog", "window_size", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def round_seed(seed: int, fog_id: int, round_id: int) -> int:
    """Training seed for one fog in one round: the first 8 bytes of SHA-256 over the triple."""
    digest = hashlib.sha256(struct.pack("<QQQ", seed, fog_id, round_id)).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class TransportRecord:
    sender: str
    receiver: str
    msg_type: int
    byte_len: int
    round_id: int


class Transport:
    """Lossless FIFO queue per directed link. Carries bytes only."""

    def __init__(self, keep_log: bool = True):
        self._queues: dict[tuple[str, str], deque[bytes]] = {}
        self.keep_log = keep_log
        self.log: list[TransportRecord] = []

    def send(self, sender: str, receiver: str, frame: bytes) -> None:
        if not isinstance(frame, (bytes, bytearray)):
            raise ProtocolError(f"transport carries bytes only, got {type(frame).__name__}")
        frame = bytes(frame)
        self._queues.setdefault((sender, receiver), deque()).append(frame)
        if self.keep_log:
            msg_type = frame[5] if len(frame) > 5 else -1
            round_id = int.from_bytes(frame[6:10], "little") if len(frame) >= 10 else -1
            self.log.append(TransportRecord(sender, receiver, msg_type, len(frame), round_id))

    def recv(self, sender: str, receiver: str) -> bytes:
        queue = self._queues.get((sender, receiver))
        if not queue:
            raise ProtocolError(f"no pending message on {sender} -> {receiver}")
        return queue.popleft()

    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())


@dataclass(frozen=True)
class RoundReport:
    round_id: int
    global_test_loss: float
    global_test_accuracy: float
    per_fog_local_accuracy: list[float]
    per_fog_local_loss: list[float]
    fog_train_loss: list[float]


@dataclass(eq=False)
class FogNode:
    fog_id: int
    shard: Shard
    window_size: int
    hyper: HyperParams
    seed: int
    current: proto.GlobalModel | None = None
    archive: list[Dataset] = field(default_factory=list)

    @property
    def cursor(self) -> int:
        """Number of windows consumed so far."""
        return len(self.archive)

    def receive_global(self, frame: bytes) -> None:
        msg = proto.decode(frame)
        if not isinstance(msg, proto.GlobalModel):
            raise ProtocolError(f"{fog_name(self.fog_id)} expected GlobalModel, got {type(msg).__name__}")
        self.current = msg

    def train_round(self, frame: bytes) -> bytes:
        start = proto.decode(frame)
        if not isinstance(start, proto.RoundStart):
            raise ProtocolError(f"{fog_name(self.fog_id)} expected RoundStart, got {type(start).__name__}")
        if self.current is None or self.current.round_id != start.round_id:
            raise ProtocolError(f"{fog_name(self.fog_id)} holds no global model for round {start.round_id}")
        if start.window_index != self.cursor:
            raise ProtocolError(f"window index {start.window_index} but fog is at {self.cursor}")
        window = next_window(self.shard, self.window_size)
        if window is None:
            raise ExhaustedStreamError(f"{fog_name(self.fog_id)} has no full window left")
        params, loss = train_local(
            self.current.params, window, self.hyper, round_seed(self.seed, self.fog_id, start.round_id)
        )
        self.archive.append(window)
        update = proto.ModelUpdate(start.round_id, self.fog_id, len(window), params, loss)
        return proto.encode(update)

    def local_metrics(self) -> tuple[float, float]:
        """Loss and accuracy of the held global model on the window just consumed."""
        return evaluate(self.current.params, self.archive[-1])


@dataclass(eq=False)
class CloudNode:
    global_model: proto.GlobalModel
    test_set: Dataset
    history: list[RoundReport] = field(default_factory=list)


class Simulation:
    """A built topology. Use :func:`build` to construct one."""

    def __init__(self, config: TopologyConfig, fogs: list[FogNode], cloud: CloudNode, transport: Transport):
        self.config = config
        self.fogs = fogs
        self.cloud = cloud
        self.transport = transport
        self._broadcast_global()

    @property
    def global_params(self) -> ModelParams:
        return self.cloud.global_model.params

    @property
    def round_id(self) -> int:
        return self.cloud.global_model.round_id

    def available_rounds(self) -> int:
        return min(f.shard.full_windows(self.config.window_size) for f in self.fogs)

    def _broadcast_global(self) -> None:
        frame = proto.encode(self.cloud.global_model)
        for fog in self.fogs:
            self.transport.send(CLOUD, fog_name(fog.fog_id), frame)
        for fog in self.fogs:
            fog.receive_global(self.transport.recv(CLOUD, fog_name(fog.fog_id)))

    def run_round(self) -> RoundReport:
        r = self.round_id
        if self.available_rounds() < 1:
            raise ExhaustedStreamError(f"no full window left for round {r + 1}")
        for fog in self.fogs:
            self.transport.send(CLOUD, fog_name(fog.fog_id), proto.encode(proto.RoundStart(r, fog.cursor)))
        starts = [self.transport.recv(CLOUD, fog_name(f.fog_id)) for f in self.fogs]

        # Fog training is independent per node; only the sends below are ordered.
        if self.config.workers > 1 and len(self.fogs) > 1:
            with ThreadPoolExecutor(max_workers=min(self.config.workers, len(self.fogs))) as pool:
                replies = list(pool.map(FogNode.train_round, self.fogs, starts))
        else:
            replies = [fog.train_round(frame) for fog, frame in zip(self.fogs, starts)]
        for fog, reply in zip(self.fogs, replies):
            self.transport.send(fog_name(fog.fog_id), CLOUD, reply)

        updates = []
        for fog in self.fogs:
            msg = proto.decode(self.transport.recv(fog_name(fog.fog_id), CLOUD))
            if not isinstance(msg, proto.ModelUpdate) or msg.round_id != r:
                raise ProtocolError(f"cloud expected a round-{r} ModelUpdate from {fog_name(fog.fog_id)}")
            updates.append(msg)
        new_params = proto.aggregate(updates)
        self.cloud.global_model = proto.GlobalModel(r + 1, new_params)
        self._broadcast_global()

        test_loss, test_acc = evaluate(new_params, self.cloud.test_set)
        local = [fog.local_metrics() for fog in self.fogs]
        report = RoundReport(
            round_id=r + 1,
            global_test_loss=test_loss,
            global_test_accuracy=test_acc,
            per_fog_local_accuracy=[acc for _, acc in local],
            per_fog_local_loss=[loss for loss, _ in local],
            fog_train_loss=[u.local_loss for u in updates],
        )
        self.cloud.history.append(report)
        return report

    def run(self, progress=None) -> list[RoundReport]:
        """Run min(config.rounds, full windows per fog) rounds; trailing partial windows are dropped."""
        reports = []
        for _ in range(min(self.config.rounds, self.available_rounds())):
            reports.append(self.run_round())
            if progress is not None:
                progress(reports[-1])
        return reports


def build(config: TopologyConfig, train: Dataset, test: Dataset, log_transport: bool = True) -> Simulation:
    if len(train) < config.num_fogs * config.window_size:
        raise ConfigError(
            f"{len(train)} training frames cannot give {config.num_fogs} fogs one window of {config.window_size}"
        )
    if len(test) < 1:
        raise ConfigError("test set is empty")
    if train.feature_dim != config.dims[0]:
        raise ConfigError(f"training features have dim {train.feature_dim}, model expects {config.dims[0]}")
    shards = partition(train, config.num_fogs, config.seed)
    fogs = [FogNode(s.fog_id, s, config.window_size, config.hyper, config.seed) for s in shards]
    cloud = CloudNode(proto.GlobalModel(0, init_params(config.seed, config.dims)), test)
    return Simulation(config, fogs, cloud, Transport(keep_log=log_transport))


def run_round(sim: Simulation) -> RoundReport:
    return sim.run_round()


def run(sim: Simulation) -> list[RoundReport]:
    return sim.run()
