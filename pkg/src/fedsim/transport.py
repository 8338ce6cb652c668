"""Wire format and byte ledger for the simulated client/server link."""

from __future__ import annotations

import struct
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"FSIM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHI")
HEADER_SIZE = _HEADER.size  # 10

SCALAR_BYTES = 8
DIRECTIVE_BYTES = 16

KINDS = ("global_model", "local_model", "control_variate", "scalar_report", "directive")
DIRECTIONS = ("down", "up")


class WireFormatError(ValueError):
    pass


def serialize_model(params) -> bytes:
    """10-byte header (magic, u16 version, u32 count) + float32 LE values."""
    values = np.asarray(params, dtype="<f4")
    if values.ndim != 1:
        raise WireFormatError("parameters must be a flat vector")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, values.size) + values.tobytes()


def deserialize_model(payload: bytes, expected_count: int | None = None) -> np.ndarray:
    if len(payload) < HEADER_SIZE:
        raise WireFormatError(f"payload of {len(payload)} bytes is shorter than the header")
    magic, version, count = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise WireFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise WireFormatError(f"unsupported format version {version}")
    if expected_count is not None and count != expected_count:
        raise WireFormatError(f"header declares {count} parameters, expected {expected_count}")
    if len(payload) != HEADER_SIZE + 4 * count:
        raise WireFormatError(
            f"header declares {count} parameters but payload carries {len(payload) - HEADER_SIZE} bytes"
        )
    return np.frombuffer(payload, dtype="<f4", offset=HEADER_SIZE).astype(np.float64)


def encode_scalars(values) -> bytes:
    return struct.pack(f"<{len(values)}d", *values)


def decode_scalars(payload: bytes) -> list[float]:
    return list(struct.unpack(f"<{len(payload) // SCALAR_BYTES}d", payload))


def encode_directive(epochs: int, steps: int) -> bytes:
    return struct.pack("<QQ", epochs, steps)


def decode_directive(payload: bytes) -> tuple[int, int]:
    return struct.unpack("<QQ", payload)


@dataclass
class TransportLedger:
    """Byte counters per (client, direction, kind), kept twice: once as seen
    by the clients and once as the server's mirror of the same traffic."""

    clients: tuple[int, ...]
    client_side: dict = field(default_factory=lambda: defaultdict(int))
    server_side: dict = field(default_factory=lambda: defaultdict(int))

    def _check(self, client, direction, kind):
        if client not in self.clients:
            raise KeyError(f"unknown client {client!r}")
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")

    def bytes_for(self, client=None, direction=None, kind=None, side: str = "client") -> int:
        table = self.client_side if side == "client" else self.server_side
        return sum(
            v for (c, d, k), v in table.items()
            if (client is None or c == client)
            and (direction is None or d == direction)
            and (kind is None or k == kind)
        )

    @property
    def total(self) -> int:
        return self.bytes_for()

    def count_table(self) -> dict:
        return {f"{c}/{d}/{k}": v for (c, d, k), v in sorted(self.client_side.items())}


def account_transfer(ledger: TransportLedger, client, direction: str, kind: str, num_bytes: int,
                     side: str = "both") -> TransportLedger:
    """Charge ``num_bytes`` to the counters; returns the same ledger."""
    ledger._check(client, direction, kind)
    if num_bytes < 0:
        raise ValueError("num_bytes must be >= 0")
    if side in ("both", "client"):
        ledger.client_side[(client, direction, kind)] += num_bytes
    if side in ("both", "server"):
        ledger.server_side[(client, direction, kind)] += num_bytes
    return ledger


class Transport:
    """Moves payloads between the server and one client, charging the ledger
    on both ends. Models and variates really go through the float32 wire
    format, so clients train on what they would have received."""

    def __init__(self, ledger: TransportLedger, num_params: int):
        self.ledger = ledger
        self.num_params = num_params
        self.round_bytes: dict[tuple[int, str], int] = defaultdict(int)

    def _move(self, client, direction, kind, payload: bytes) -> bytes:
        account_transfer(self.ledger, client, direction, kind, len(payload), side="server" if direction == "down" else "client")
        received = bytes(payload)
        account_transfer(self.ledger, client, direction, kind, len(received), side="client" if direction == "down" else "server")
        self.round_bytes[(client, direction)] += len(received)
        return received

    def send_model(self, client, params, kind: str = "global_model") -> np.ndarray:
        data = self._move(client, "down", kind, serialize_model(params))
        return deserialize_model(data, self.num_params)

    def upload_model(self, client, params, kind: str = "local_model") -> np.ndarray:
        data = self._move(client, "up", kind, serialize_model(params))
        return deserialize_model(data, self.num_params)

    def upload_scalars(self, client, values) -> list[float]:
        if not values:
            return []
        return decode_scalars(self._move(client, "up", "scalar_report", encode_scalars(values)))

    def send_directive(self, client, epochs: int, steps: int) -> tuple[int, int]:
        return decode_directive(self._move(client, "down", "directive", encode_directive(epochs, steps)))

    def take_round_bytes(self) -> dict[tuple[int, str], int]:
        out = dict(self.round_bytes)
        self.round_bytes.clear()
        return out
