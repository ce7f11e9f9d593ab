import asyncio

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from pydantic import ValidationError

from app.netrun.roles import CONDITION_FAILED, AliceRole, BobRole, EveRelay, run_local
from app.netrun.transport import FrameConnection, PeerClosed, loopback_pair
from app.netrun.wire import Abort, Hello, Qudit
from app.schemas.distill import DistillParams
from app.schemas.netrun import ProtocolParams, RoleConfig
from app.services.distill import LabeledKey, simulate_distillation
from app.services.field import field_spec
from app.services.protocol import ROLE_DISTILL, run_session, stream
from app.services.qstates import DiagonalPhase

TIMEOUT = 30


@pytest.fixture
def params():
    return ProtocolParams(n=2, rounds=6000, seed=1, distill=DistillParams(k=1, r=3))


def _bits(arr) -> str:
    return "".join(str(int(b)) for b in arr)


def _local(params, channel=None):
    return asyncio.run(asyncio.wait_for(run_local(params, channel), TIMEOUT))


def _in_process(params, channel="identity"):
    session = run_session(params.session_config(channel))
    keys = LabeledKey.from_raw_keys(session.alice_key, session.bob_key)
    return session, simulate_distillation(keys, params.distill, stream(params.seed, ROLE_DISTILL))


def test_direct_run_matches_in_process_engine(params):
    alice, bob, eve = _local(params)
    session, outcome = _in_process(params)
    assert eve is None
    assert alice.status == bob.status == "ok"
    assert alice.raw_key_length == bob.raw_key_length == session.stats.raw_key_length
    assert bob.stats["e_b"]["value"] == session.stats.e_b.value
    assert bob.stats["e_c"]["value"] == session.stats.e_c.value
    assert bob.stats["verdict"] == session.stats.verdict == True
    assert alice.final_key == _bits(outcome.alice)
    assert bob.final_key == _bits(outcome.bob)
    assert alice.final_key_length == outcome.length > 0
    assert bob.stats["final"]["disagreement_rate"] == 0

def test_alice_and_bob_agree_on_the_estimates(params):
    alice, bob, _ = _local(params)
    for key in ("e_b", "e_c", "verdict", "pm_lhs"):
        assert alice.stats[key] == bob.stats[key]

def test_relay_through_eve_matches_session_with_the_same_channel(params):
    params = params.model_copy(update={"n": 3, "rounds": 8000})
    alice, bob, eve = _local(params, "z_flip:0.05")
    session, _ = _in_process(params, "z_flip:0.05")
    assert bob.raw_key_length == session.stats.raw_key_length
    assert bob.stats["e_b"] == session.stats.e_b.model_dump()
    assert bob.stats["e_c"] == session.stats.e_c.model_dump()
    assert bob.stats["verdict"] == session.stats.verdict
    assert eve.status == "ok"
    assert eve.stats["qudits"] == params.rounds
    assert sum(eve.actions.values()) == params.rounds
    flip = f"X0P{DiagonalPhase.norm(field_spec(3)).mask:#x}"
    assert set(eve.actions) == {"X0P0x0", flip}
    assert eve.actions[flip] < eve.actions["X0P0x0"]
    assert len(eve.audit) == 1000
    assert eve.audit[0] == {"round": 0, "action": eve.audit[0]["action"]}

def test_identity_eve_is_transparent(params):
    direct_alice, direct_bob, _ = _local(params)
    alice, bob, eve = _local(params, "identity")
    assert alice.final_key == direct_alice.final_key
    assert bob.final_key == direct_bob.final_key
    assert bob.stats == direct_bob.stats
    assert eve.actions == {"X0P0x0": params.rounds}

def test_transcripts_are_deterministic(params):
    first = _local(params)
    second = _local(params)
    for a, b in zip(first[:2], second[:2]):
        assert a.transcript_sha256 == b.transcript_sha256
        assert a.frames == b.frames > 2 * params.rounds

def test_failed_condition_aborts_both_sides(params):
    alice, bob, _ = _local(params, "full_dephase")
    assert alice.status == bob.status == "aborted"
    assert alice.reason == bob.reason == CONDITION_FAILED
    assert alice.final_key == bob.final_key == ""
    assert bob.stats["verdict"] is False

def test_short_key_aborts_with_insufficient_length(params):
    params = params.model_copy(update={"distill": DistillParams(k=8, r=101)})
    alice, bob, _ = _local(params)
    assert alice.status == bob.status == "aborted"
    assert alice.reason == bob.reason == "insufficient-length"

def test_config_mismatch_aborts():
    async def run():
        a, b = loopback_pair()
        return await asyncio.gather(
            AliceRole(FrameConnection(a), ProtocolParams(rounds=100, seed=1)).run(),
            BobRole(FrameConnection(b), ProtocolParams(rounds=100, seed=2)).run())

    alice, bob = asyncio.run(asyncio.wait_for(run(), TIMEOUT))
    assert alice.status == bob.status == "aborted"
    assert alice.reason == bob.reason == "config-mismatch"

def test_peer_disconnect_is_reported():
    async def run():
        a, b = loopback_pair()
        await b.close()
        return await BobRole(FrameConnection(a), ProtocolParams(rounds=10)).run()

    report = asyncio.run(asyncio.wait_for(run(), TIMEOUT))
    assert report.status == "disconnected"


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.binary(min_size=1, max_size=200))
def test_garbage_from_peer_ends_cleanly(data):
    async def run():
        a, b = loopback_pair()
        await b.send(data)
        await b.close()
        return await BobRole(FrameConnection(a), ProtocolParams(rounds=10)).run()

    report = asyncio.run(asyncio.wait_for(run(), TIMEOUT))
    assert report.status in ("aborted", "disconnected")


async def _corrupting_run(params, target: int, offset: int, xor: int):
    """Alice and Bob through a relay that flips bits in the payload of one frame."""
    a, relay_a = loopback_pair()
    relay_b, b = loopback_pair()
    up, down = FrameConnection(relay_a), FrameConnection(relay_b)
    seen = [0]

    async def pump(src, dst):
        try:
            while True:
                frame = bytearray(await src.recv_frame())
                if seen[0] == target and len(frame) > 4:
                    frame[4 + offset % (len(frame) - 4)] ^= xor
                seen[0] += 1
                await dst.send_frame(bytes(frame))
        except (PeerClosed, ValueError):
            pass
        finally:
            await dst.close()

    results = await asyncio.gather(AliceRole(FrameConnection(a), params).run(),
                                   BobRole(FrameConnection(b), params).run(),
                                   pump(up, down), pump(down, up))
    return results[0], results[1]


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 700), st.integers(0, 64), st.integers(1, 255))
def test_corrupted_frames_never_hang(target, offset, xor):
    params = ProtocolParams(rounds=200, seed=3, distill=DistillParams(k=0, r=1))
    alice, bob = asyncio.run(asyncio.wait_for(_corrupting_run(params, target, offset, xor), TIMEOUT))
    assert alice.status in ("ok", "aborted", "disconnected", "insufficient-sift")
    assert bob.status in ("ok", "aborted", "disconnected", "insufficient-sift")


async def _eve_against(first):
    """Eve between two scripted endpoints; the Alice side sends `first` and both sides wait for a reply."""
    alice_end, eve_up = loopback_pair()
    eve_down, bob_end = loopback_pair()
    eve = EveRelay(FrameConnection(eve_up, "alice"), FrameConnection(eve_down, "bob"), "z_flip:0.1")
    task = asyncio.create_task(eve.run())
    alice, bob = FrameConnection(alice_end), FrameConnection(bob_end)
    await alice.send(first)
    to_bob = await bob.recv()
    to_alice = await alice.recv()
    await alice.close()
    await bob.close()
    return await task, to_alice, to_bob


@pytest.mark.parametrize("first", [Hello({"n": 99}), Hello({"rounds": "many"}), Qudit(b"\x00\x00\x01")])
def test_eve_aborts_on_unreadable_traffic(first):
    report, to_alice, to_bob = asyncio.run(asyncio.wait_for(_eve_against(first), TIMEOUT))
    assert report.status == "aborted"
    assert report.reason == "protocol-error"
    assert to_alice == Abort("protocol-error")
    assert to_bob == Abort("protocol-error")
    assert report.stats["qudits"] == 0


def test_eve_reports_ok_on_a_clean_relay(params):
    _, _, eve = _local(params, "z_flip:0.1")
    assert eve.status == "ok"
    assert eve.reason is None


def test_role_config_requires_endpoints():
    with pytest.raises(ValidationError):
        RoleConfig(role="alice")
    with pytest.raises(ValidationError):
        RoleConfig(role="bob")
    with pytest.raises(ValidationError):
        RoleConfig(role="eve", connect_alice="127.0.0.1:7000")
    assert RoleConfig(role="bob", connect_alice="127.0.0.1:7000").params.n == 2

def test_tcp_roles_produce_matching_keys(params, unused_port):
    from app.netrun.roles import run_role

    endpoint = f"127.0.0.1:{unused_port}"
    small = params.model_copy(update={"rounds": 3000, "distill": DistillParams(k=0, r=1)})

    async def run():
        return await asyncio.gather(run_role(RoleConfig(role="alice", listen=endpoint, params=small)),
                                    run_role(RoleConfig(role="bob", connect_alice=endpoint, params=small)))

    alice, bob = asyncio.run(asyncio.wait_for(run(), TIMEOUT))
    assert alice.status == bob.status
    assert alice.final_key == bob.final_key
    assert alice.transcript_sha256 != bob.transcript_sha256


@pytest.fixture
def unused_port():
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]
