"""Frame codec for the classical and relayed quantum messages.

A frame is `length (u32, big endian) | type (u8) | payload`, where `length`
counts the type byte plus the payload. Integers are big endian.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Tuple, Union

import numpy as np

from app.core.exceptions import ProtocolError

LENGTH = struct.Struct("!I")
TYPE = struct.Struct("!B")
MAX_FRAME = 1 << 26

PAIR = struct.Struct("!HH")
OUTCOME = struct.Struct("!IHHB")
ROUND = struct.Struct("!I")
REVEAL = struct.Struct("!IB")
PARITY = struct.Struct("!QI")
BLOCK = struct.Struct("!IQI")


class MsgType(IntEnum):
    HELLO = 0x00
    QUDIT = 0x01
    PAIR_ANNOUNCE = 0x02
    OUTCOME_ANNOUNCE = 0x03
    SIFT_ACCEPT = 0x04
    SAMPLE_REVEAL = 0x05
    PARITY_ROUND = 0x06
    BLOCK_PARITY = 0x07
    VERDICT = 0x08
    ABORT = 0x0F


@dataclass(frozen=True)
class Hello:
    params: Dict


@dataclass(frozen=True)
class Qudit:
    """Serialized SparseKet: (u16 index, sign byte) per term."""

    ket: bytes


@dataclass(frozen=True)
class PairAnnounce:
    i: int
    j: int


@dataclass(frozen=True)
class OutcomeAnnounce:
    round: int
    i: int
    j: int
    # 1 for an in-pair outcome, 0 for Outside; the sign is never announced
    in_pair: int


@dataclass(frozen=True)
class SiftAccept:
    rounds: Tuple[int, ...]


@dataclass(frozen=True)
class SampleReveal:
    entries: Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class ParityRound:
    seed: int
    count: int
    bitmap: bytes


@dataclass(frozen=True)
class BlockParity:
    r: int
    seed: int
    count: int
    bitmap: bytes


@dataclass(frozen=True)
class Verdict:
    stats: Dict


@dataclass(frozen=True)
class Abort:
    reason: str


Message = Union[Hello, Qudit, PairAnnounce, OutcomeAnnounce, SiftAccept, SampleReveal, ParityRound,
                BlockParity, Verdict, Abort]


def _json(obj: Dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _bitmap_len(count: int) -> int:
    return (count + 7) // 8


def encode_payload(msg: Message) -> Tuple[MsgType, bytes]:
    if isinstance(msg, Hello):
        return MsgType.HELLO, _json(msg.params)
    if isinstance(msg, Qudit):
        return MsgType.QUDIT, msg.ket
    if isinstance(msg, PairAnnounce):
        return MsgType.PAIR_ANNOUNCE, PAIR.pack(msg.i, msg.j)
    if isinstance(msg, OutcomeAnnounce):
        return MsgType.OUTCOME_ANNOUNCE, OUTCOME.pack(msg.round, msg.i, msg.j, msg.in_pair)
    if isinstance(msg, SiftAccept):
        return MsgType.SIFT_ACCEPT, np.asarray(msg.rounds, dtype=">u4").tobytes()
    if isinstance(msg, SampleReveal):
        return MsgType.SAMPLE_REVEAL, b"".join(REVEAL.pack(idx, bit) for idx, bit in msg.entries)
    if isinstance(msg, ParityRound):
        return MsgType.PARITY_ROUND, PARITY.pack(msg.seed, msg.count) + msg.bitmap
    if isinstance(msg, BlockParity):
        return MsgType.BLOCK_PARITY, BLOCK.pack(msg.r, msg.seed, msg.count) + msg.bitmap
    if isinstance(msg, Verdict):
        return MsgType.VERDICT, _json(msg.stats)
    if isinstance(msg, Abort):
        return MsgType.ABORT, msg.reason.encode("utf-8")
    raise TypeError(f"not a wire message: {msg!r}")


def encode(msg: Message) -> bytes:
    kind, payload = encode_payload(msg)
    return LENGTH.pack(TYPE.size + len(payload)) + TYPE.pack(kind) + payload


def _malformed(detail: str) -> ProtocolError:
    return ProtocolError("protocol-error", detail)


def _increasing(values) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


def _load_json(payload: bytes, what: str) -> Dict:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise _malformed(f"{what} payload is not JSON: {e}") from e
    if not isinstance(obj, dict):
        raise _malformed(f"{what} payload must be a JSON object")
    return obj


def _fixed(struct_: struct.Struct, payload: bytes, what: str) -> Tuple:
    if len(payload) != struct_.size:
        raise _malformed(f"{what} payload must be {struct_.size} bytes, got {len(payload)}")
    return struct_.unpack(payload)


def _bitmap(count: int, bitmap: bytes, what: str) -> bytes:
    if len(bitmap) != _bitmap_len(count):
        raise _malformed(f"{what} bitmap of {len(bitmap)} bytes for {count} bits")
    return bitmap


def decode_payload(kind: int, payload: bytes) -> Message:
    try:
        kind = MsgType(kind)
    except ValueError:
        raise _malformed(f"unknown frame type {kind:#04x}") from None

    if kind is MsgType.HELLO:
        return Hello(_load_json(payload, "HELLO"))
    if kind is MsgType.QUDIT:
        if len(payload) not in (3, 6) or any(payload[off + 2] > 1 for off in range(0, len(payload), 3)):
            raise _malformed(f"bad QUDIT payload of {len(payload)} bytes")
        return Qudit(payload)
    if kind is MsgType.PAIR_ANNOUNCE:
        i, j = _fixed(PAIR, payload, "PAIR_ANNOUNCE")
        if i == j:
            raise _malformed("PAIR_ANNOUNCE needs two distinct indices")
        return PairAnnounce(i, j)
    if kind is MsgType.OUTCOME_ANNOUNCE:
        rnd, i, j, flag = _fixed(OUTCOME, payload, "OUTCOME_ANNOUNCE")
        if i == j or flag > 1:
            raise _malformed(f"bad OUTCOME_ANNOUNCE pair=({i},{j}) flag={flag}")
        return OutcomeAnnounce(rnd, i, j, flag)
    if kind is MsgType.SIFT_ACCEPT:
        if len(payload) % ROUND.size:
            raise _malformed("SIFT_ACCEPT payload is not a u32 list")
        rounds = tuple(int(v) for v in np.frombuffer(payload, dtype=">u4"))
        if not _increasing(rounds):
            raise _malformed("SIFT_ACCEPT rounds must be strictly increasing")
        return SiftAccept(rounds)
    if kind is MsgType.SAMPLE_REVEAL:
        if len(payload) % REVEAL.size:
            raise _malformed("SAMPLE_REVEAL payload is not an (u32, u8) list")
        entries = tuple(REVEAL.iter_unpack(payload))
        if any(bit > 1 for _, bit in entries) or not _increasing([idx for idx, _ in entries]):
            raise _malformed("SAMPLE_REVEAL needs increasing indices and 0/1 bits")
        return SampleReveal(entries)
    if kind is MsgType.PARITY_ROUND:
        if len(payload) < PARITY.size:
            raise _malformed("PARITY_ROUND payload too short")
        seed, count = PARITY.unpack_from(payload)
        return ParityRound(seed, count, _bitmap(count, payload[PARITY.size:], "PARITY_ROUND"))
    if kind is MsgType.BLOCK_PARITY:
        if len(payload) < BLOCK.size:
            raise _malformed("BLOCK_PARITY payload too short")
        r, seed, count = BLOCK.unpack_from(payload)
        if r == 0 or r % 2 == 0:
            raise _malformed(f"BLOCK_PARITY needs an odd r, got {r}")
        return BlockParity(r, seed, count, _bitmap(count, payload[BLOCK.size:], "BLOCK_PARITY"))
    if kind is MsgType.VERDICT:
        return Verdict(_load_json(payload, "VERDICT"))
    try:
        return Abort(payload.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise _malformed("ABORT reason is not UTF-8") from e


def decode(frame: bytes) -> Message:
    """Decode one complete frame, length prefix included."""
    if len(frame) < LENGTH.size + TYPE.size:
        raise _malformed(f"frame of {len(frame)} bytes is shorter than its header")
    (length,) = LENGTH.unpack_from(frame)
    if length != len(frame) - LENGTH.size:
        raise _malformed(f"frame length field {length} does not match {len(frame) - LENGTH.size} bytes")
    return decode_payload(frame[LENGTH.size], frame[LENGTH.size + TYPE.size:])


def check_length(length: int) -> None:
    if length < TYPE.size or length > MAX_FRAME:
        raise _malformed(f"frame length {length} outside 1..{MAX_FRAME}")
