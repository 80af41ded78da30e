import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from luckchain import primitives, tee
from luckchain.errors import (
    BadLink,
    ConcurrentInvocation,
    ConfigurationError,
    DecodeError,
    NoRound,
    PowExhausted,
    TooEarly,
    WrongParent,
)
from luckchain.ledger import GENESIS, BlockHeader
from luckchain.primitives import POL_MEASUREMENT, POW_MEASUREMENT, POT_MEASUREMENT, PrimitiveConfig


def header_on(block):
    return BlockHeader(block.digest(), b"\x00" * 32)


def test_config_defaults_and_validation():
    cfg = PrimitiveConfig()
    assert (cfg.round_time, cfg.max_mine_delay) == (15000, 10000)
    with pytest.raises(ConfigurationError):
        PrimitiveConfig(max_mine_delay=15000)
    with pytest.raises(ConfigurationError):
        PrimitiveConfig(pot_duration=0)


def test_mine_delay_formula(cfg):
    assert primitives.mine_delay(0.75, cfg) == 2500
    assert primitives.mine_delay(0.0, cfg) == cfg.max_mine_delay
    assert primitives.mine_delay(1 - 2**-53, cfg) == 0
    with pytest.raises(ValueError):
        primitives.mine_delay(1.0, cfg)


@settings(max_examples=100)
@given(a=st.floats(0, 1, exclude_max=True), b=st.floats(0, 1, exclude_max=True))
def test_mine_delay_monotone(a, b):
    cfg = PrimitiveConfig()
    if a < b:
        assert primitives.mine_delay(a, cfg) >= primitives.mine_delay(b, cfg)


def test_luck_payload_roundtrip_and_strictness():
    nonce = bytes(range(32))
    data = primitives.encode_luck_payload(nonce, 0.25)
    assert primitives.decode_luck_payload(data) == (nonce, 0.25)
    with pytest.raises(DecodeError):
        primitives.decode_luck_payload(data + b"\x00")
    with pytest.raises(DecodeError):
        primitives.decode_luck_payload(primitives.encode_luck_payload(nonce, 1.0))


def test_pow_trivial_difficulty(handle):
    h = tee.start_enclave(handle.cpu, POW_MEASUREMENT)
    att, evals = primitives.tee_pow(h, b"n" * 32, 0)
    assert evals == 1
    assert att.mode is tee.Mode.RANDOM_BASE


def test_pow_mean_is_geometric(registry):
    h = tee.start_enclave(tee.create_cpu(5, 0, registry), POW_MEASUREMENT)
    counts = []
    for i in range(400):
        att, evals = primitives.tee_pow(h, i.to_bytes(32, "big"), 8)
        assert tee.verify_attestation(att, POW_MEASUREMENT, registry).valid
        counts.append(evals)
    # geometric with p = 2^-8: mean 256, sd ~ 255.5, standard error ~ 12.8
    assert abs(statistics.mean(counts) - 256) < 4 * 255.5 / 20


def test_pow_exhaustion(handle):
    with pytest.raises(PowExhausted):
        primitives.tee_pow(handle, b"n", 64, max_iterations=10)


def test_pow_tampered_payload_rejected(registry):
    h = tee.start_enclave(tee.create_cpu(5, 0, registry), POW_MEASUREMENT)
    att, _ = primitives.tee_pow(h, b"n", 4)
    bad = tee.Attestation(att.measurement, att.payload[:-1] + b"\x05", att.mode, att.signature)
    assert not tee.verify_attestation(bad, POW_MEASUREMENT, registry).valid


def test_proof_of_time(registry, clock):
    cpu = tee.create_cpu(7, 0, registry, clock)
    h = tee.start_enclave(cpu, POT_MEASUREMENT)
    att = primitives.proof_of_time(h, b"n", 1000)
    assert clock.now == 1000
    assert tee.verify_attestation(att, POT_MEASUREMENT, registry).valid


def test_proof_of_time_detects_second_instance(registry, clock):
    cpu = tee.create_cpu(7, 0, registry, clock)
    h = tee.start_enclave(cpu, POT_MEASUREMENT)
    clock.call_at(500, tee.start_enclave, cpu, POT_MEASUREMENT)
    with pytest.raises(ConcurrentInvocation):
        primitives.proof_of_time(h, b"n", 1000)


def test_proof_of_time_two_cpus_concurrently(registry, clock):
    handles = [tee.start_enclave(tee.create_cpu(7, i, registry, clock), POT_MEASUREMENT) for i in range(2)]
    pendings = [primitives.begin_proof_of_time(h, b"n", 1000) for h in handles]
    clock.advance_to(1000)
    for p in pendings:
        assert tee.verify_attestation(p.finish(), POT_MEASUREMENT, registry).valid


def test_proof_of_ownership_counts_cpus():
    registry = tee.VendorRegistry()
    handles = [tee.start_enclave(tee.create_cpu(7, i, registry), primitives.POO_MEASUREMENT) for i in range(6)]
    pseudonyms = {primitives.proof_of_ownership(h, b"block").pseudonym for h in handles for _ in range(4)}
    assert len(pseudonyms) == 6
    first = primitives.proof_of_ownership(handles[0], b"block")
    assert first.basename == b"block"
    assert primitives.proof_of_ownership(handles[0], b"other").pseudonym != first.pseudonym


def test_pol_round_sets_state(handle, clock):
    clock.advance_to(40)
    primitives.pol_round(handle, GENESIS)
    assert handle.round_block is GENESIS and handle.round_time == 40
    primitives.pol_round(handle, "later")
    assert handle.round_block == "later"


def test_pol_mine_happy_path(handle, cfg, registry, clock):
    primitives.pol_round(handle, GENESIS)
    clock.advance_to(cfg.round_time)
    expected_l = tee.random_draw(tee.start_enclave(tee.create_cpu(7, 0, tee.VendorRegistry()), POL_MEASUREMENT))
    header = header_on(GENESIS)
    proof, delay = primitives.pol_mine(handle, header, GENESIS, cfg)
    assert proof.l == expected_l
    assert delay == primitives.mine_delay(proof.l, cfg)
    assert clock.now == cfg.round_time + delay
    verdict = tee.verify_attestation(proof.attestation, POL_MEASUREMENT, registry)
    assert primitives.decode_luck_payload(verdict.payload) == (header.digest(), proof.l)


def test_pol_mine_round_time_boundary(handle, cfg, clock):
    primitives.pol_round(handle, GENESIS)
    clock.advance_to(cfg.round_time - 1)
    with pytest.raises(TooEarly):
        primitives.begin_pol_mine(handle, header_on(GENESIS), GENESIS, cfg)
    clock.advance_to(cfg.round_time)
    primitives.begin_pol_mine(handle, header_on(GENESIS), GENESIS, cfg)


def test_pol_mine_needs_round_and_only_once(handle, cfg, clock):
    with pytest.raises(NoRound):
        primitives.pol_mine(handle, header_on(GENESIS), GENESIS, cfg)
    primitives.pol_round(handle, GENESIS)
    clock.advance_to(cfg.round_time)
    primitives.pol_mine(handle, header_on(GENESIS), GENESIS, cfg)
    with pytest.raises(NoRound):
        primitives.pol_mine(handle, header_on(GENESIS), GENESIS, cfg)


def test_pol_mine_link_checks(handle, cfg, clock):
    from conftest import honest_chain

    chain, _ = honest_chain(2)
    first, second = chain.blocks
    primitives.pol_round(handle, first)
    clock.advance_to(cfg.round_time)
    with pytest.raises(BadLink):
        primitives.begin_pol_mine(handle, header_on(first), second, cfg)
    with pytest.raises(WrongParent):
        primitives.begin_pol_mine(handle, header_on(second), second, cfg)
    # a sibling of the round block is fine
    sibling = type(first)(first.parent, (), first.proof)
    primitives.begin_pol_mine(handle, header_on(sibling), sibling, cfg)


def test_pol_mine_detects_restart_during_delay(handle, cfg, clock):
    primitives.pol_round(handle, GENESIS)
    clock.advance_to(cfg.round_time)
    pending = primitives.begin_pol_mine(handle, header_on(GENESIS), GENESIS, cfg)
    tee.start_enclave(handle.cpu, POL_MEASUREMENT)
    clock.advance_to(pending.release_at)
    with pytest.raises(ConcurrentInvocation):
        pending.finish()


def test_release_ordering(registry, clock, cfg):
    handles = [tee.start_enclave(tee.create_cpu(21, i, registry, clock), POL_MEASUREMENT) for i in range(8)]
    for h in handles:
        primitives.pol_round(h, GENESIS)
    clock.advance_to(cfg.round_time)
    pendings = [primitives.begin_pol_mine(h, header_on(GENESIS), GENESIS, cfg) for h in handles]
    by_luck = sorted(pendings, key=lambda p: -p.l)
    releases = [p.release_at for p in by_luck]
    assert releases == sorted(releases)
