import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from luckchain import tee
from luckchain.errors import CompromiseRequired, ConfigurationError
from luckchain.primitives import POL_MEASUREMENT, POT_MEASUREMENT


def test_create_cpu_is_deterministic():
    a = tee.create_cpu(7, 0, tee.VendorRegistry())
    b = tee.create_cpu(7, 0, tee.VendorRegistry())
    assert a.cpu_id == b.cpu_id
    assert len(a.cpu_id) == 16
    assert tee.create_cpu(7, 1, tee.VendorRegistry()).cpu_id != a.cpu_id


def test_duplicate_index_rejected(registry):
    tee.create_cpu(7, 0, registry)
    with pytest.raises(ConfigurationError):
        tee.create_cpu(7, 0, registry)


def test_thousand_cpus_have_distinct_ids(registry):
    ids = {tee.create_cpu(7, i, registry).cpu_id for i in range(1000)}
    assert len(ids) == 1000


def test_counters(registry):
    cpu = tee.create_cpu(7, 0, registry)
    other = tee.create_cpu(7, 1, registry)
    h1 = tee.start_enclave(cpu, POL_MEASUREMENT)
    assert h1.counter_at_start == 1
    assert tee.read_counter(h1) == 1
    tee.start_enclave(other, POL_MEASUREMENT)
    assert tee.read_counter(h1) == 1
    h2 = tee.start_enclave(cpu, POL_MEASUREMENT)
    assert h2.counter_at_start == 2
    assert tee.read_counter(h1) == h1.counter_at_start + 1
    # counters are per measurement
    assert tee.start_enclave(cpu, POT_MEASUREMENT).counter_at_start == 1


def test_trusted_time_follows_clock_and_offset(registry, clock):
    h = tee.start_enclave(tee.create_cpu(7, 0, registry, clock), POL_MEASUREMENT)
    assert tee.trusted_time(h) == 0
    clock.advance_to(15000)
    assert tee.trusted_time(h) == 15000
    skewed = tee.start_enclave(tee.create_cpu(7, 1, registry, clock, clock_offset=-400), POL_MEASUREMENT)
    assert tee.trusted_time(skewed) == 14600
    with pytest.raises(ValueError):
        clock.advance_to(10)


def test_random_draws_deterministic_and_in_range(registry):
    h1 = tee.start_enclave(tee.create_cpu(3, 0, registry), POL_MEASUREMENT)
    h2 = tee.start_enclave(tee.create_cpu(3, 0, tee.VendorRegistry()), POL_MEASUREMENT)
    a = [tee.random_draw(h1) for _ in range(500)]
    b = [tee.random_draw(h2) for _ in range(500)]
    assert a == b
    assert all(0.0 <= x < 1.0 for x in a)
    # 53-bit grid
    assert all(math.ldexp(x, 53).is_integer() for x in a)


def test_random_draws_ks_against_uniform(registry):
    # Kolmogorov-Smirnov as a second opinion next to the DKW acceptance check
    from scipy import stats

    h = tee.start_enclave(tee.create_cpu(11, 0, registry), POL_MEASUREMENT)
    draws = [tee.random_draw(h) for _ in range(20000)]
    assert stats.kstest(draws, "uniform").pvalue > 0.001


def test_attest_modes_and_pseudonyms(registry):
    cpu = tee.create_cpu(7, 0, registry)
    h = tee.start_enclave(cpu, POL_MEASUREMENT)
    plain = tee.attest(h, b"payload")
    assert plain.mode is tee.Mode.RANDOM_BASE
    assert plain.pseudonym is None and plain.basename is None
    a = tee.attest(h, b"one", basename=b"base")
    b = tee.attest(h, b"two", basename=b"base")
    c = tee.attest(h, b"one", basename=b"other")
    assert a.mode is tee.Mode.NAME_BASE
    assert a.pseudonym == b.pseudonym != c.pseudonym
    h_other = tee.start_enclave(tee.create_cpu(7, 1, registry), POL_MEASUREMENT)
    assert tee.attest(h_other, b"one", basename=b"base").pseudonym != a.pseudonym


def test_pseudonyms_unique_over_population():
    registry = tee.VendorRegistry()
    handles = [tee.start_enclave(tee.create_cpu(9, i, registry), POL_MEASUREMENT) for i in range(10_000)]
    pseudonyms = {tee.attest(h, b"", basename=b"parent").pseudonym for h in handles}
    assert len(pseudonyms) == 10_000


def test_verify_roundtrip_and_measurement(registry):
    h = tee.start_enclave(tee.create_cpu(7, 0, registry), POL_MEASUREMENT)
    att = tee.attest(h, b"data")
    ok = tee.verify_attestation(att, POL_MEASUREMENT, registry)
    assert ok.valid and ok.payload == b"data"
    assert not tee.verify_attestation(att, POT_MEASUREMENT, registry).valid
    assert not tee.verify_attestation(att, POL_MEASUREMENT, tee.VendorRegistry()).valid
    assert not tee.verify_attestation("garbage", POL_MEASUREMENT, registry).valid


def test_revoked_cpu_does_not_verify(registry):
    cpu = tee.create_cpu(7, 0, registry)
    att = tee.attest(tee.start_enclave(cpu, POL_MEASUREMENT), b"x")
    registry.revoke(cpu.cpu_id)
    assert not tee.verify_attestation(att, POL_MEASUREMENT, registry).valid


def test_every_byte_flip_invalidates(registry):
    h = tee.start_enclave(tee.create_cpu(7, 0, registry), POL_MEASUREMENT)
    for basename in (None, b"base"):
        raw = tee.attest(h, b"some payload bytes", basename).encode()
        for i in range(len(raw)):
            mutated = bytearray(raw)
            mutated[i] ^= 0x01
            try:
                att = tee.Attestation.decode(bytes(mutated))
            except Exception:
                continue
            assert not tee.verify_attestation(att, POL_MEASUREMENT, registry).valid, i


def test_splicing_honest_signature_fails(registry):
    h = tee.start_enclave(tee.create_cpu(7, 0, registry), POL_MEASUREMENT)
    att = tee.attest(h, b"l=0.1")
    spliced = tee.Attestation(att.measurement, b"l=0.9", att.mode, att.signature)
    assert not tee.verify_attestation(spliced, POL_MEASUREMENT, registry).valid


def test_signing_oracle_requires_compromise(registry):
    cpu = tee.create_cpu(7, 0, registry)
    with pytest.raises(CompromiseRequired):
        tee.signing_oracle(cpu, POL_MEASUREMENT, b"x")
    cpu.compromised = True
    forged = tee.signing_oracle(cpu, POL_MEASUREMENT, b"x", basename=b"b")
    assert tee.verify_attestation(forged, POL_MEASUREMENT, registry).valid
    honest = tee.attest(tee.start_enclave(cpu, POL_MEASUREMENT), b"y", basename=b"b")
    assert forged.pseudonym == honest.pseudonym


def test_clock_timers_fire_in_order():
    clock = tee.SimClock()
    fired = []
    clock.call_at(20, fired.append, "b")
    clock.call_at(10, fired.append, "a")
    clock.sleep(15)
    assert fired == ["a"] and clock.now == 15
    clock.sleep(10)
    assert fired == ["a", "b"]


@settings(max_examples=50, deadline=None)
@given(payload=st.binary(max_size=64), basename=st.one_of(st.none(), st.binary(min_size=1, max_size=32)))
def test_attestation_encoding_roundtrip(payload, basename):
    registry = tee.VendorRegistry()
    h = tee.start_enclave(tee.create_cpu(1, 0, registry), POL_MEASUREMENT)
    att = tee.attest(h, payload, basename)
    again = tee.Attestation.decode(att.encode())
    assert again == att
    assert tee.verify_attestation(again, POL_MEASUREMENT, registry).payload == payload


@settings(max_examples=30, deadline=None)
@given(starts=st.lists(st.sampled_from([0, 1]), max_size=30))
def test_counter_monotone_property(starts):
    registry = tee.VendorRegistry()
    cpus = [tee.create_cpu(1, i, registry) for i in range(2)]
    watch = tee.start_enclave(cpus[0], POL_MEASUREMENT)
    seen = [tee.read_counter(watch)]
    for which in starts:
        tee.start_enclave(cpus[which], POL_MEASUREMENT)
        seen.append(tee.read_counter(watch))
    assert seen == sorted(seen)
    assert seen[-1] == 1 + starts.count(0)
