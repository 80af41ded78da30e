"""Software stand-in for an SGX-class trusted execution environment.

Isolation is modelled by API discipline: a CPU's keys live in private
attributes and only the functions in this module touch them. Attestations are
HMAC-SHA512 tags under a per-CPU key; name-base pseudonyms are HMAC-SHA256 of
the basename under the same key, so they link proofs from one CPU without
revealing which CPU it was.
"""
import enum
import hashlib
import heapq
import hmac
import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .encoding import Reader, lp, sha256, u8, u64
from .errors import CompromiseRequired, ConfigurationError, DecodeError

ZERO_DIGEST = bytes(32)
SIGNATURE_SIZE = 64
_TWO_POW_M53 = 2.0 ** -53


def measurement_of(name):
    """Code identity of a named enclave."""
    return sha256(b"luckchain/enclave", name.encode())


class SimClock:
    """Integer-millisecond simulation clock.

    ``sleep`` advances time and fires any timers that fall due on the way,
    which is how code running "outside" an enclave gets to interleave with a
    sleeping one in standalone use. The network simulator drives ``now``
    directly through ``advance_to``.
    """

    def __init__(self, now=0):
        self.now = now
        self._timers = []
        self._seq = itertools.count()

    def call_at(self, when, fn, *args):
        if when < self.now:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._timers, (when, next(self._seq), fn, args))

    def advance_to(self, when):
        if when < self.now:
            raise ValueError(f"clock cannot go backwards ({when} < {self.now})")
        while self._timers and self._timers[0][0] <= when:
            due, _, fn, args = heapq.heappop(self._timers)
            self.now = due
            fn(*args)
        self.now = when

    def sleep(self, ms):
        self.advance_to(self.now + ms)


class Mode(enum.IntEnum):
    RANDOM_BASE = 0
    NAME_BASE = 1


@dataclass(eq=False)
class CpuIdentity:
    index: int
    cpu_id: bytes
    clock: SimClock
    clock_offset: int = 0
    compromised: bool = False
    counters: dict = field(default_factory=dict)
    draws: int = 0
    _secret_key: bytes = field(default=b"", repr=False)
    _rng_key: bytes = field(default=b"", repr=False)


@dataclass(eq=False)
class EnclaveHandle:
    cpu: CpuIdentity
    measurement: bytes
    counter_at_start: int
    round_block: Optional[object] = None
    round_time: Optional[int] = None


@dataclass(frozen=True)
class Attestation:
    measurement: bytes
    payload: bytes
    mode: Mode
    signature: bytes
    basename: Optional[bytes] = None
    pseudonym: Optional[bytes] = None

    def signed_bytes(self):
        parts = [b"luckchain/attest", self.measurement, u8(int(self.mode)), lp(self.payload)]
        if self.mode is Mode.NAME_BASE:
            parts += [lp(self.basename), self.pseudonym]
        return b"".join(parts)

    def encode(self):
        out = [self.measurement, u8(int(self.mode)), lp(self.payload)]
        if self.mode is Mode.NAME_BASE:
            out += [lp(self.basename), self.pseudonym]
        out.append(self.signature)
        return b"".join(out)

    @classmethod
    def decode(cls, data):
        r = Reader(data)
        att = cls.read(r)
        r.finish()
        return att

    @classmethod
    def read(cls, r):
        measurement = r.take(32)
        try:
            mode = Mode(r.u8())
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
        payload = r.lp(max_len=1 << 16)
        basename = pseudonym = None
        if mode is Mode.NAME_BASE:
            basename = r.lp(max_len=1 << 10)
            pseudonym = r.take(32)
        signature = r.take(SIGNATURE_SIZE)
        return cls(measurement, payload, mode, signature, basename, pseudonym)


class Verification(NamedTuple):
    valid: bool
    payload: Optional[bytes]


class VendorRegistry:
    """The platform vendor's view: which CPU keys are genuine, which revoked."""

    def __init__(self):
        self._keys = {}
        self._indices = {}
        self.revoked = set()
        self.version = 0

    @property
    def registered(self):
        return frozenset(self._keys)

    def __len__(self):
        return len(self._keys)

    def _register(self, cpu):
        if cpu.index in self._indices:
            raise ConfigurationError(f"duplicate CPU index {cpu.index}")
        self._indices[cpu.index] = cpu.cpu_id
        self._keys[cpu.cpu_id] = cpu._secret_key
        self.version += 1

    def revoke(self, cpu_id):
        self.revoked.add(cpu_id)
        self.version += 1

    def _signer_of(self, message, signature):
        for cpu_id, key in self._keys.items():
            tag = hmac.new(key, message, hashlib.sha512).digest()
            if hmac.compare_digest(tag, signature):
                return cpu_id
        return None


def create_cpu(master_seed, index, registry, clock=None, clock_offset=0):
    """Manufacture an emulated CPU and register its key with the vendor."""
    seed = u64(master_seed & 0xFFFFFFFFFFFFFFFF) + u64(index)
    cpu_id = hashlib.blake2b(seed, digest_size=16, person=b"lc-cpu-id").digest()
    secret = hashlib.blake2b(seed, digest_size=32, person=b"lc-cpu-key").digest()
    rng_key = hashlib.blake2b(seed[:8] + cpu_id, digest_size=32, person=b"lc-cpu-rng").digest()
    cpu = CpuIdentity(
        index=index,
        cpu_id=cpu_id,
        clock=clock if clock is not None else SimClock(),
        clock_offset=clock_offset,
        _secret_key=secret,
        _rng_key=rng_key,
    )
    registry._register(cpu)
    return cpu


def start_enclave(cpu, measurement):
    counter = cpu.counters.get(measurement, 0) + 1
    cpu.counters[measurement] = counter
    return EnclaveHandle(cpu=cpu, measurement=measurement, counter_at_start=counter)


def read_counter(handle):
    return handle.cpu.counters.get(handle.measurement, 0)


def trusted_time(handle):
    return handle.cpu.clock.now + handle.cpu.clock_offset


def random_draw(handle):
    """Uniform double in [0, 1) with 53 random bits.

    The value depends only on the CPU's seed-derived key and the draw index.
    """
    cpu = handle.cpu
    index = cpu.draws
    cpu.draws = index + 1
    word = hashlib.blake2b(u64(index), digest_size=8, key=cpu._rng_key).digest()
    return (int.from_bytes(word, "big") >> 11) * _TWO_POW_M53


def _pseudonym(cpu, basename):
    return hmac.new(cpu._secret_key, b"luckchain/pseudonym" + basename, hashlib.sha256).digest()


def _issue(cpu, measurement, payload, basename):
    if basename is None:
        unsigned = Attestation(measurement, bytes(payload), Mode.RANDOM_BASE, b"")
    else:
        basename = bytes(basename)
        unsigned = Attestation(
            measurement, bytes(payload), Mode.NAME_BASE, b"", basename, _pseudonym(cpu, basename)
        )
    tag = hmac.new(cpu._secret_key, unsigned.signed_bytes(), hashlib.sha512).digest()
    return Attestation(
        unsigned.measurement, unsigned.payload, unsigned.mode, tag, unsigned.basename, unsigned.pseudonym
    )


def attest(handle, payload, basename=None):
    """Quote ``payload`` as produced by ``handle``'s enclave.

    Without a basename the quote is anonymous (random base); with one it
    carries the CPU's pseudonym for that basename.
    """
    return _issue(handle.cpu, handle.measurement, payload, basename)


def verify_attestation(att, expected_measurement, registry):
    """Check an attestation; never raises on malformed input."""
    try:
        if not isinstance(att, Attestation) or len(att.signature) != SIGNATURE_SIZE:
            return Verification(False, None)
        if att.measurement != expected_measurement:
            return Verification(False, None)
        if att.mode is Mode.NAME_BASE:
            if att.basename is None or att.pseudonym is None or len(att.pseudonym) != 32:
                return Verification(False, None)
        elif att.basename is not None or att.pseudonym is not None:
            return Verification(False, None)
        signer = registry._signer_of(att.signed_bytes(), att.signature)
    except (TypeError, ValueError, AttributeError):
        return Verification(False, None)
    if signer is None or signer in registry.revoked:
        return Verification(False, None)
    return Verification(True, att.payload)


def signing_oracle(cpu, measurement, payload, basename=None):
    """Sign arbitrary data with a compromised CPU's key.

    Models key extraction as an oracle grant: forgeries still carry the real
    CPU's pseudonym, so name-base linkability survives the compromise.
    """
    if not cpu.compromised:
        raise CompromiseRequired(f"CPU {cpu.index} is not marked compromised")
    return _issue(cpu, measurement, payload, basename)
