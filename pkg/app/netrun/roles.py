"""Alice, Bob and Eve as message-driven state machines.

Alice and Bob draw from the same per-role block streams as the in-process
engine and reuse its preparation, detection, sifting, sampling and
distillation steps, so a run with the same seeds yields the same keys.
Bob is the statistics authority: he announces outcomes, the sifted rounds
and both verdicts.
"""
from __future__ import annotations

import asyncio
import hashlib
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Type

import numpy as np

from app.core.exceptions import ProtocolError, QKDError
from app.netrun.transport import FrameConnection, PeerClosed, accept_one, connect, loopback_pair
from app.netrun.wire import (
    LENGTH,
    TYPE,
    Abort,
    BlockParity,
    Hello,
    Message,
    MsgType,
    OutcomeAnnounce,
    PairAnnounce,
    ParityRound,
    Qudit,
    SampleReveal,
    SiftAccept,
    Verdict,
    encode,
)
from app.schemas.netrun import ProtocolParams, RoleConfig, RoleReport
from app.services.channels import ChannelModel, InterceptResend, RandomPhase, Unitary, parse_channel
from app.services.distill import (
    block_parities,
    draw_seeds,
    grouping,
    minimum_length,
    pack_bits,
    pair_parities,
    pairing,
    unpack_bits,
)
from app.services.field import FieldSpec, field_spec
from app.services.protocol import (
    NO_OFFSET,
    ROLE_DISTILL,
    alice_block,
    bob_block,
    channel_step,
    choose_sample,
    detect,
    ec_counts,
    estimate_eb,
    eve_block,
    prepare,
    session_verdict,
    sifted_positions,
    stream,
    wilson,
)
from app.services.qstates import Outcome, decode_ket, encode_ket, line_offset

logger = logging.getLogger(__name__)

CONDITION_FAILED = "condition-2-failed"
AUDIT_LIMIT = 1000


class PeerAborted(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _protocol_error(detail: str) -> ProtocolError:
    return ProtocolError("protocol-error", detail)


def _digest(transcript: List[Tuple[str, bytes]]) -> str:
    h = hashlib.sha256()
    for direction, frame in transcript:
        h.update(b"S" if direction == "send" else b"R")
        h.update(frame)
    return h.hexdigest()


class _Draws:
    """Current block of a role's stream, refreshed when the round leaves it."""

    def __init__(self, factory: Callable[[int], object], block_size: int):
        self.factory = factory
        self.block_size = block_size
        self.block = -1
        self.draws = None

    def at(self, r: int):
        block, k = divmod(r, self.block_size)
        if block != self.block:
            self.draws = self.factory(block)
            self.block = block
        return self.draws, k


class _Endpoint:
    role = ""

    def __init__(self, conn: FrameConnection, params: ProtocolParams):
        self.conn = conn
        self.params = params
        self.spec: FieldSpec = field_spec(params.n, params.modulus)
        self.stats: Dict = {}
        self.raw_key_length = 0
        self.final_key: Optional[np.ndarray] = None
        self.reason: Optional[str] = None

    async def expect(self, kind: Type[Message]) -> Message:
        msg = await self.conn.recv()
        if isinstance(msg, Abort):
            raise PeerAborted(msg.reason)
        if not isinstance(msg, kind):
            raise _protocol_error(f"expected {kind.__name__}, got {type(msg).__name__}")
        return msg

    async def expect_pair(self) -> Tuple[int, int]:
        announced = await self.expect(PairAnnounce)
        if max(announced.i, announced.j) >= self.spec.N:
            raise _protocol_error(f"PAIR_ANNOUNCE index outside the alphabet: {announced}")
        return announced.i, announced.j

    async def handshake(self) -> None:
        mine = self.params.model_dump(mode="json")
        await self.conn.send(Hello(mine))
        hello = await self.expect(Hello)
        if hello.params != mine:
            raise ProtocolError("config-mismatch", f"{self.role} parameters differ from the peer's")

    async def mutual_abort(self, reason: str) -> None:
        """Send ABORT and consume the peer's own ABORT for the same reason."""
        await self.conn.send(Abort(reason))
        msg = await self.conn.recv()
        if not isinstance(msg, Abort):
            raise _protocol_error(f"expected ABORT, got {type(msg).__name__}")

    async def body(self) -> str:
        raise NotImplementedError

    def report(self, status: str, reason: Optional[str] = None) -> RoleReport:
        reason = reason or self.reason
        final = self.final_key if self.final_key is not None else np.zeros(0, dtype=np.uint8)
        return RoleReport(role=self.role, status=status, reason=reason, stats=self.stats,
                          raw_key_length=self.raw_key_length, final_key_length=len(final),
                          final_key="".join(str(int(b)) for b in final), frames=len(self.conn.transcript),
                          transcript_sha256=_digest(self.conn.transcript))

    async def run(self) -> RoleReport:
        try:
            status = await self.body()
            report = self.report(status)
        except PeerAborted as e:
            logger.warning("%s: peer aborted reason=%s", self.role, e.reason)
            report = self.report("aborted", e.reason)
        except QKDError as e:
            reason = getattr(e, "reason", "protocol-error")
            logger.warning("%s: aborting reason=%s detail=%s", self.role, reason, e)
            try:
                await self.conn.send(Abort(reason))
            except ConnectionError:
                pass
            report = self.report("aborted", reason)
        except ConnectionError as e:
            logger.warning("%s: disconnected %s", self.role, e)
            report = self.report("disconnected", str(e))
        finally:
            await self.conn.close()
        logger.info("%s finished status=%s final=%d", self.role, report.status, report.final_key_length)
        return report

    def distill_seeds(self) -> List[int]:
        return draw_seeds(stream(self.params.seed, ROLE_DISTILL), self.params.distill.k)


class AliceRole(_Endpoint):
    role = "alice"

    async def body(self) -> str:
        p = self.params
        spec = self.spec
        await self.handshake()
        draws = _Draws(lambda b: alice_block(spec, p.seed, b, p.block_size), p.block_size)
        alice_pairs = np.zeros((p.rounds, 2), dtype=np.int64)
        bob_pairs = np.zeros((p.rounds, 2), dtype=np.int64)
        signs = np.zeros(p.rounds, dtype=np.uint8)
        for r in range(p.rounds):
            block, k = draws.at(r)
            state = prepare(spec, block, k)
            await self.conn.send(Qudit(encode_ket(state.ket())))
            announced = await self.expect_pair()
            await self.conn.send(PairAnnounce(*state.pair))
            alice_pairs[r] = state.pair
            bob_pairs[r] = announced
            signs[r] = state.sign

        in_pair = np.zeros(p.rounds, dtype=bool)
        last = -1
        while True:
            msg = await self.conn.recv()
            if isinstance(msg, Abort):
                raise PeerAborted(msg.reason)
            if isinstance(msg, SiftAccept):
                sift = msg
                break
            if not isinstance(msg, OutcomeAnnounce):
                raise _protocol_error(f"expected OUTCOME_ANNOUNCE or SIFT_ACCEPT, got {type(msg).__name__}")
            if not last < msg.round < p.rounds or tuple(bob_pairs[msg.round]) != (msg.i, msg.j):
                raise _protocol_error(f"OUTCOME_ANNOUNCE for round {msg.round} does not match the announcements")
            last = msg.round
            in_pair[msg.round] = bool(msg.in_pair)

        offsets = np.array([NO_OFFSET if (o := line_offset(spec, tuple(a), tuple(b))) is None else o
                            for a, b in zip(alice_pairs.tolist(), bob_pairs.tolist())], dtype=np.int64)
        self.stats["e_c"] = wilson(*ec_counts(offsets, in_pair, p.ec_reading)).model_dump()

        kept = np.array(sift.rounds, dtype=np.int64)
        if len(kept) and (kept[-1] >= p.rounds or not np.all(alice_pairs[kept] == bob_pairs[kept])):
            raise _protocol_error("SIFT_ACCEPT lists a round whose pairs differ")
        self.raw_key_length = len(kept)
        if len(kept) == 0:
            return "insufficient-sift"

        alice_raw = signs[kept]
        sample = choose_sample(len(kept), p.sample_fraction, p.seed)
        await self.conn.send(SampleReveal(tuple((int(pos), int(alice_raw[pos])) for pos in sample)))
        verdict = await self.expect(Verdict)
        self.stats.update(verdict.stats)
        if not verdict.stats.get("verdict"):
            self.reason = CONDITION_FAILED
            await self.mutual_abort(CONDITION_FAILED)
            return "aborted"

        keep_mask = np.ones(len(kept), dtype=bool)
        keep_mask[sample] = False
        bits = alice_raw[keep_mask]
        if len(bits) < minimum_length(p.distill):
            self.reason = "insufficient-length"
            await self.mutual_abort(self.reason)
            return "aborted"

        seeds = self.distill_seeds()
        for t in range(p.distill.k):
            first, second = pairing(seeds[t], len(bits))
            mine = pair_parities(bits, first, second)
            await self.conn.send(ParityRound(seeds[t], len(mine), pack_bits(mine)))
            reply = await self.expect(ParityRound)
            if reply.seed != seeds[t] or reply.count != len(mine):
                raise _protocol_error("PARITY_ROUND reply does not match the round")
            keep = mine == unpack_bits(reply.bitmap, reply.count)
            bits = bits[first[keep]]

        groups = grouping(seeds[-1], len(bits), p.distill.r)
        final = block_parities(bits, groups)
        await self.conn.send(BlockParity(p.distill.r, seeds[-1], len(final), pack_bits(final)))
        closing = await self.expect(Verdict)
        self.stats["final"] = closing.stats
        self.final_key = final
        return "ok"


class BobRole(_Endpoint):
    role = "bob"

    async def body(self) -> str:
        p = self.params
        spec = self.spec
        await self.handshake()
        draws = _Draws(lambda b: bob_block(spec, p.seed, b, p.block_size), p.block_size)
        alice_pairs = np.zeros((p.rounds, 2), dtype=np.int64)
        bob_pairs = np.zeros((p.rounds, 2), dtype=np.int64)
        outcomes = np.zeros(p.rounds, dtype=np.int64)
        bob_bits = np.zeros(p.rounds, dtype=np.uint8)
        for r in range(p.rounds):
            block, k = draws.at(r)
            qudit = await self.expect(Qudit)
            pair, outcome, bit = detect(spec, decode_ket(spec, qudit.ket), block, k)
            await self.conn.send(PairAnnounce(*pair))
            alice_pairs[r] = await self.expect_pair()
            bob_pairs[r] = pair
            outcomes[r] = int(outcome)
            bob_bits[r] = bit

        in_pair = outcomes != int(Outcome.OUTSIDE)
        offsets = np.zeros(p.rounds, dtype=np.int64)
        for r in range(p.rounds):
            o = line_offset(spec, tuple(alice_pairs[r].tolist()), tuple(bob_pairs[r].tolist()))
            offsets[r] = NO_OFFSET if o is None else o
            if o is not None:
                await self.conn.send(OutcomeAnnounce(r, int(bob_pairs[r, 0]), int(bob_pairs[r, 1]), int(in_pair[r])))
        kept = sifted_positions(alice_pairs, bob_pairs, in_pair, p.keep_outside)
        await self.conn.send(SiftAccept(tuple(int(v) for v in kept)))
        e_c = wilson(*ec_counts(offsets, in_pair, p.ec_reading))
        self.stats["e_c"] = e_c.model_dump()
        self.raw_key_length = len(kept)
        if len(kept) == 0:
            return "insufficient-sift"

        bob_raw, in_pair_raw = bob_bits[kept], in_pair[kept]
        sample = choose_sample(len(kept), p.sample_fraction, p.seed)
        reveal = await self.expect(SampleReveal)
        if [idx for idx, _ in reveal.entries] != sample.tolist():
            raise _protocol_error("SAMPLE_REVEAL positions differ from the agreed sample")
        alice_bits = np.array([bit for _, bit in reveal.entries], dtype=np.uint8)
        e_b, e_b_all = estimate_eb(alice_bits, bob_raw[sample], in_pair_raw[sample])
        lhs, bound, verdict = session_verdict(e_b, e_c, p.n, p.gate)
        keep_mask = np.ones(len(kept), dtype=bool)
        keep_mask[sample] = False
        self.stats.update(phase="estimate", raw_key_length=len(kept),
                          in_pair_sifted=int(np.count_nonzero(in_pair_raw)), sample_size=len(sample),
                          final_key_length=int(keep_mask.sum()), e_b=e_b.model_dump(),
                          e_b_all=e_b_all.model_dump(), e_c=e_c.model_dump(), pm_lhs=lhs, pm_lhs_bound=bound,
                          verdict=verdict)
        await self.conn.send(Verdict(dict(self.stats)))
        if not verdict:
            self.reason = CONDITION_FAILED
            await self.mutual_abort(CONDITION_FAILED)
            return "aborted"

        bits = bob_raw[keep_mask]
        if len(bits) < minimum_length(p.distill):
            self.reason = "insufficient-length"
            await self.mutual_abort(self.reason)
            return "aborted"

        seeds = self.distill_seeds()
        for t in range(p.distill.k):
            offer = await self.expect(ParityRound)
            if offer.seed != seeds[t] or offer.count != len(bits) // 2:
                raise _protocol_error("PARITY_ROUND does not match the agreed seed or key length")
            first, second = pairing(offer.seed, len(bits))
            mine = pair_parities(bits, first, second)
            await self.conn.send(ParityRound(offer.seed, len(mine), pack_bits(mine)))
            keep = mine == unpack_bits(offer.bitmap, offer.count)
            bits = bits[first[keep]]

        block = await self.expect(BlockParity)
        if block.r != p.distill.r or block.seed != seeds[-1]:
            raise _protocol_error("BLOCK_PARITY does not match the agreed r or seed")
        final = block_parities(bits, grouping(block.seed, len(bits), block.r))
        if block.count != len(final):
            raise _protocol_error(f"BLOCK_PARITY carries {block.count} bits, expected {len(final)}")
        alice_final = unpack_bits(block.bitmap, block.count)
        disagreement = float(np.mean(alice_final != final)) if len(final) else None
        closing = {"phase": "final", "final_key_length": len(final), "disagreement_rate": disagreement}
        self.stats["final"] = closing
        await self.conn.send(Verdict(closing))
        self.final_key = final
        return "ok"


def _action_name(action) -> str:
    if isinstance(action, Unitary):
        return f"X{action.a}P{action.phase.mask:#x}"
    if isinstance(action, RandomPhase):
        return f"X{action.a}P(random)"
    if isinstance(action, InterceptResend):
        return "intercept"
    return type(action).__name__  # pragma: no cover


class EveRelay:
    """Relays every frame; QUDIT frames from Alice pass through the channel model."""

    role = "eve"

    def __init__(self, upstream: FrameConnection, downstream: FrameConnection, channel: str):
        self.upstream = upstream
        self.downstream = downstream
        self.channel = channel
        self.model: Optional[ChannelModel] = None
        self.params: Optional[ProtocolParams] = None
        self.rounds = 0
        self.actions: Counter = Counter()
        self.audit: List[Dict] = []
        self.draws: Optional[_Draws] = None
        self.failure: Optional[str] = None

    def _on_hello(self, frame: bytes) -> None:
        try:
            params = ProtocolParams(**json.loads(frame[LENGTH.size + TYPE.size:].decode("utf-8")))
        except (ValueError, TypeError) as e:
            raise _protocol_error(f"eve: unreadable HELLO {e}") from e
        self.params = params
        self.model = parse_channel(self.channel, field_spec(params.n, params.modulus))
        self.draws = _Draws(lambda b: eve_block(params.seed, b, params.block_size), params.block_size)

    def _tamper(self, frame: bytes) -> bytes:
        if self.model is None:
            raise _protocol_error("eve: QUDIT before HELLO")
        spec = self.model.spec
        try:
            ket = decode_ket(spec, frame[LENGTH.size + TYPE.size:])
        except QKDError as e:
            raise _protocol_error(f"eve: undecodable QUDIT {e}") from e
        draws, k = self.draws.at(self.rounds)
        name = _action_name(self.model.pick(draws.u[k]))
        received = channel_step(self.model, ket, draws, k)
        self.actions[name] += 1
        if len(self.audit) < AUDIT_LIMIT:
            self.audit.append({"round": self.rounds, "action": name})
        logger.debug("eve round=%d action=%s", self.rounds, name)
        self.rounds += 1
        return encode(Qudit(encode_ket(received)))

    async def _abort_both(self, reason: str) -> None:
        self.failure = reason
        for conn in (self.upstream, self.downstream):
            try:
                await conn.send(Abort(reason))
            except (ConnectionError, QKDError):
                pass

    async def _pump(self, src: FrameConnection, dst: FrameConnection, tamper: bool) -> None:
        try:
            while True:
                try:
                    frame = await src.recv_frame()
                except PeerClosed:
                    break
                kind = frame[LENGTH.size]
                if kind == MsgType.HELLO and tamper:
                    self._on_hello(frame)
                elif kind == MsgType.QUDIT and tamper:
                    frame = self._tamper(frame)
                await dst.send_frame(frame)
        except ProtocolError as e:
            logger.warning("eve: aborting %s", e)
            await self._abort_both(e.reason)
        except (ConnectionError, QKDError) as e:
            logger.warning("eve: relay stopped %s", e)
        finally:
            await dst.close()

    async def run(self) -> RoleReport:
        await asyncio.gather(self._pump(self.upstream, self.downstream, True),
                             self._pump(self.downstream, self.upstream, False))
        transcript = self.upstream.transcript + self.downstream.transcript
        status = "ok" if self.failure is None else "aborted"
        return RoleReport(role="eve", status=status, reason=self.failure, frames=len(transcript),
                          transcript_sha256=_digest(transcript),
                          actions=dict(sorted(self.actions.items())), audit=self.audit,
                          stats={"qudits": self.rounds, "channel": self.channel})


async def run_local(params: ProtocolParams, channel: Optional[str] = None
                    ) -> Tuple[RoleReport, RoleReport, Optional[RoleReport]]:
    """All roles in one event loop over loopback links; `channel=None` connects Alice to Bob directly."""
    if channel is None:
        a, b = loopback_pair()
        alice, bob = await asyncio.gather(AliceRole(FrameConnection(a, "bob"), params).run(),
                                          BobRole(FrameConnection(b, "alice"), params).run())
        return alice, bob, None
    a, eve_up = loopback_pair()
    eve_down, b = loopback_pair()
    eve = EveRelay(FrameConnection(eve_up, "alice"), FrameConnection(eve_down, "bob"), channel)
    alice, bob, eve_report = await asyncio.gather(AliceRole(FrameConnection(a, "eve"), params).run(),
                                                  BobRole(FrameConnection(b, "eve"), params).run(),
                                                  eve.run())
    return alice, bob, eve_report


async def run_role(config: RoleConfig) -> RoleReport:
    if config.role == "alice":
        link = await accept_one(config.listen)
        report = await AliceRole(FrameConnection(link, "bob"), config.params).run()
    elif config.role == "bob":
        link = await (connect(config.connect_alice) if config.connect_alice else accept_one(config.listen))
        report = await BobRole(FrameConnection(link, "alice"), config.params).run()
    else:
        upstream = await connect(config.connect_alice)
        downstream = await connect(config.connect_bob)
        report = await EveRelay(FrameConnection(upstream, "alice"), FrameConnection(downstream, "bob"),
                                config.channel).run()
    if config.report:
        Path(config.report).write_text(report.model_dump_json(indent=2))
    return report


async def eve_middlebox(config: RoleConfig) -> RoleReport:
    if config.role != "eve":
        raise ValueError("eve_middlebox needs an eve role config")
    return await run_role(config)
