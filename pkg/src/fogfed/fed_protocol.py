"""Sample-weighted federated averaging and the FFL1 wire format.

Frame layout, all integers little-endian::

    magic "FFL1" | version u8 = 1 | msg_type u8 | round_id u32 | payload_len u32 | payload

Payloads:

* RoundStart (1): window_index u32
* ModelUpdate (2): fog_id u32 | sample_count u64 | local_loss f32 | tensors
* GlobalModel (3): tensors

``tensors`` is tensor_count u8 = 4 followed by, for w1, b1, w2, b2 in that
order, elem_count u32 and that many f32 values in row-major order.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import (
    FramingError,
    InvalidArgumentError,
    ProtocolError,
    TruncationError,
    UnsupportedMessageError,
)
from .nn_core import ModelParams

MAGIC = b"FFL1"
VERSION = 1
HEADER = struct.Struct("<4sBBII")
HEADER_SIZE = HEADER.size  # 14
TENSOR_COUNT = 4
_U32_MAX = 2**32 - 1
_U64_MAX = 2**64 - 1
_UPDATE_PREFIX = struct.Struct("<IQf")


class MsgType(enum.IntEnum):
    ROUND_START = 1
    MODEL_UPDATE = 2
    GLOBAL_MODEL = 3


@dataclass(frozen=True)
class RoundStart:
    round_id: int
    window_index: int

    msg_type = MsgType.ROUND_START


@dataclass(frozen=True)
class ModelUpdate:
    round_id: int
    fog_id: int
    sample_count: int
    params: ModelParams
    local_loss: float

    msg_type = MsgType.MODEL_UPDATE

    def __post_init__(self):
        if self.sample_count < 1:
            raise InvalidArgumentError("sample_count must be >= 1")
        # The loss travels as f32; keep the in-memory value identical to the wire value.
        object.__setattr__(self, "local_loss", float(np.float32(self.local_loss)))


@dataclass(frozen=True)
class GlobalModel:
    round_id: int
    params: ModelParams

    msg_type = MsgType.GLOBAL_MODEL


WireMessage = Union[RoundStart, ModelUpdate, GlobalModel]


# --- aggregation ------------------------------------------------------------


def aggregate(updates: list[ModelUpdate]) -> ModelParams:
    """Elementwise mean of the updates' params, weighted by sample_count.

    Accumulates in float64 in ascending fog_id order, then casts back to the
    params' dtype.
    """
    if not updates:
        raise InvalidArgumentError("aggregate needs at least one update")
    first = updates[0]
    for u in updates[1:]:
        if u.round_id != first.round_id:
            raise ProtocolError(f"mixed round ids {first.round_id} and {u.round_id}")
        if not u.params.same_shape(first.params):
            raise ProtocolError("updates carry parameters of different shapes")
    ordered = sorted(updates, key=lambda u: u.fog_id)
    total = float(sum(u.sample_count for u in ordered))
    dtype = first.params.dtype
    out = []
    for k in range(TENSOR_COUNT):
        acc = np.zeros(first.params.arrays()[k].shape, dtype=np.float64)
        for u in ordered:
            acc += (u.sample_count / total) * u.params.arrays()[k].astype(np.float64)
        out.append(acc.astype(dtype))
    return ModelParams(*out)


# --- codec ------------------------------------------------------------------


def _check_u32(name: str, value: int) -> None:
    if not 0 <= value <= _U32_MAX:
        raise InvalidArgumentError(f"{name}={value} does not fit in u32")


def _encode_tensors(params: ModelParams) -> bytes:
    parts = [struct.pack("<B", TENSOR_COUNT)]
    for a in params.arrays():
        flat = np.ascontiguousarray(a, dtype="<f4").ravel()
        parts.append(struct.pack("<I", flat.size))
        parts.append(flat.tobytes())
    return b"".join(parts)


def encode(msg: WireMessage) -> bytes:
    _check_u32("round_id", msg.round_id)
    if isinstance(msg, RoundStart):
        _check_u32("window_index", msg.window_index)
        payload = struct.pack("<I", msg.window_index)
    elif isinstance(msg, ModelUpdate):
        _check_u32("fog_id", msg.fog_id)
        if msg.sample_count > _U64_MAX:
            raise InvalidArgumentError("sample_count does not fit in u64")
        payload = _UPDATE_PREFIX.pack(msg.fog_id, msg.sample_count, msg.local_loss) + _encode_tensors(msg.params)
    elif isinstance(msg, GlobalModel):
        payload = _encode_tensors(msg.params)
    else:
        raise InvalidArgumentError(f"not a wire message: {type(msg).__name__}")
    return HEADER.pack(MAGIC, VERSION, msg.msg_type, msg.round_id, len(payload)) + payload


def frame_size(msg_type: MsgType, dims: tuple[int, int, int]) -> int:
    """Encoded length in bytes of a parameter-carrying message for a net of ``dims``."""
    n_in, n_hidden, n_out = dims
    n_values = n_in * n_hidden + n_hidden + n_hidden * n_out + n_out
    tensors = 1 + 4 * TENSOR_COUNT + 4 * n_values
    if msg_type == MsgType.GLOBAL_MODEL:
        return HEADER_SIZE + tensors
    if msg_type == MsgType.MODEL_UPDATE:
        return HEADER_SIZE + _UPDATE_PREFIX.size + tensors
    return HEADER_SIZE + 4


def _decode_tensors(payload: bytes, offset: int) -> ModelParams:
    if offset + 1 > len(payload):
        raise FramingError("payload ends before tensor_count")
    (count,) = struct.unpack_from("<B", payload, offset)
    offset += 1
    if count != TENSOR_COUNT:
        raise FramingError(f"tensor_count {count}, expected {TENSOR_COUNT}")
    flats = []
    for k in range(TENSOR_COUNT):
        if offset + 4 > len(payload):
            raise FramingError(f"payload ends inside tensor {k} header")
        (n,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        if offset + 4 * n > len(payload):
            raise FramingError(f"tensor {k} declares {n} values beyond payload_len")
        flats.append(np.frombuffer(payload, dtype="<f4", count=n, offset=offset).astype(np.float32))
        offset += 4 * n
    if offset != len(payload):
        raise FramingError(f"{len(payload) - offset} unexpected bytes after tensors")
    w1, b1, w2, b2 = flats
    n_hidden, n_out = b1.size, b2.size
    if n_hidden == 0 or n_out == 0 or w1.size % n_hidden or w2.size != n_hidden * n_out or w1.size == 0:
        raise FramingError(f"tensor sizes {[f.size for f in flats]} do not form a dense 2-layer net")
    params = ModelParams(w1.reshape(-1, n_hidden), b1, w2.reshape(n_hidden, n_out), b2)
    if not params.is_finite():
        raise ProtocolError("parameters contain NaN or infinity")
    return params


def decode(data: bytes) -> WireMessage:
    data = bytes(data)
    if len(data) < HEADER_SIZE:
        if data[:4] != MAGIC[: min(4, len(data))]:
            raise ProtocolError("bad magic")
        raise TruncationError(f"{len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, msg_type, round_id, payload_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedMessageError(f"unsupported version {version}")
    if msg_type not in MsgType._value2member_map_:
        raise UnsupportedMessageError(f"unknown msg_type {msg_type}")
    available = len(data) - HEADER_SIZE
    if available < payload_len:
        raise TruncationError(f"payload_len {payload_len} but only {available} bytes follow the header")
    if available > payload_len:
        raise FramingError(f"{available - payload_len} bytes beyond declared payload_len {payload_len}")
    payload = data[HEADER_SIZE:]

    if msg_type == MsgType.ROUND_START:
        if payload_len != 4:
            raise FramingError(f"RoundStart payload must be 4 bytes, got {payload_len}")
        return RoundStart(round_id, struct.unpack("<I", payload)[0])
    if msg_type == MsgType.GLOBAL_MODEL:
        return GlobalModel(round_id, _decode_tensors(payload, 0))
    if payload_len < _UPDATE_PREFIX.size:
        raise FramingError("ModelUpdate payload shorter than its fixed fields")
    fog_id, sample_count, local_loss = _UPDATE_PREFIX.unpack_from(payload)
    if sample_count < 1:
        raise ProtocolError("ModelUpdate sample_count must be >= 1")
    if not np.isfinite(local_loss):
        raise ProtocolError("ModelUpdate local_loss is not finite")
    params = _decode_tensors(payload, _UPDATE_PREFIX.size)
    return ModelUpdate(round_id, fog_id, sample_count, params, local_loss)
