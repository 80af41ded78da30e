"""The four TEE-resident consensus primitives.

Each function here runs "inside" the emulated enclave identified by its
handle. Blocking primitives (proof of time, proof-of-luck mining) come in two
halves, ``begin_*`` and ``Pending*.finish``, so the network simulator can
schedule the release instead of blocking; the one-shot forms sleep on the
CPU's clock between the halves.
"""
import hashlib
from dataclasses import dataclass
from typing import NamedTuple, Optional

from . import tee
from .encoding import Reader, f64, lp, u64
from .errors import (
    BadLink,
    ConcurrentInvocation,
    ConfigurationError,
    DecodeError,
    NoRound,
    PowExhausted,
    TooEarly,
    WrongParent,
)

POL_MEASUREMENT = tee.measurement_of("proof-of-luck/v1")
POW_MEASUREMENT = tee.measurement_of("proof-of-work/v1")
POT_MEASUREMENT = tee.measurement_of("proof-of-time/v1")
POO_MEASUREMENT = tee.measurement_of("proof-of-ownership/v1")


@dataclass(frozen=True)
class PrimitiveConfig:
    round_time: int = 15000
    max_mine_delay: int = 10000
    pot_duration: int = 1000
    pow_difficulty: int = 8
    pow_max_iterations: int = 1 << 22

    def __post_init__(self):
        for name in ("round_time", "max_mine_delay", "pot_duration", "pow_max_iterations"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 <= self.pow_difficulty <= 256:
            raise ConfigurationError("pow_difficulty must be a bit count in [0, 256]")
        if self.max_mine_delay >= self.round_time:
            raise ConfigurationError("max_mine_delay must be below round_time")


@dataclass(frozen=True)
class LuckProof:
    nonce: bytes
    l: float
    attestation: tee.Attestation

    def __post_init__(self):
        # The nonce and l fields are a decoded view of the attested payload and
        # may not disagree with it; otherwise two proofs with different luck
        # would share one wire encoding.
        if decode_luck_payload(self.attestation.payload) != (self.nonce, self.l):
            raise ValueError("proof fields do not match the attested payload")

    @classmethod
    def from_attestation(cls, att):
        nonce, l = decode_luck_payload(att.payload)
        return cls(nonce, l, att)


def encode_luck_payload(nonce, l):
    return nonce + f64(l)


def decode_luck_payload(payload):
    r = Reader(payload)
    nonce = r.take(32)
    l = r.f64()
    r.finish()
    if not 0.0 <= l < 1.0:
        raise DecodeError(f"luck value {l!r} outside [0, 1)")
    return nonce, l


# -- proof of work -------------------------------------------------------------


class PowResult(NamedTuple):
    attestation: tee.Attestation
    evaluations: int


def _meets_target(h, difficulty):
    return int.from_bytes(h, "big") >> (256 - difficulty) == 0 if difficulty else True


def tee_pow(handle, nonce, difficulty, max_iterations=1 << 22):
    """Hash-preimage proof of work, attested by the enclave on success.

    ``difficulty`` is the number of leading zero bits required. The number of
    hash evaluations is reported alongside the attestation.
    """
    base = hashlib.sha256(b"luckchain/pow")
    base.update(lp(nonce))
    # each invocation searches from its own enclave-drawn starting point
    start = int(tee.random_draw(handle) * 2**53)
    for attempt in range(max_iterations):
        h = base.copy()
        h.update(u64(start + attempt))
        if _meets_target(h.digest(), difficulty):
            payload = lp(nonce) + u64(difficulty)
            return PowResult(tee.attest(handle, payload), attempt + 1)
    raise PowExhausted(f"no solution within {max_iterations} evaluations")


# -- proof of time -------------------------------------------------------------


@dataclass
class PendingAttestation:
    """An enclave call that is asleep until ``release_at``."""

    handle: tee.EnclaveHandle
    release_at: int
    payload: bytes
    basename: Optional[bytes] = None

    def finish(self):
        if tee.read_counter(self.handle) != self.handle.counter_at_start:
            raise ConcurrentInvocation("monotonic counter moved while the enclave slept")
        return tee.attest(self.handle, self.payload, self.basename)


def begin_proof_of_time(handle, nonce, duration):
    if duration <= 0:
        raise ValueError("duration must be positive")
    payload = lp(nonce) + u64(duration)
    return PendingAttestation(handle, handle.cpu.clock.now + duration, payload)


def proof_of_time(handle, nonce, duration):
    pending = begin_proof_of_time(handle, nonce, duration)
    handle.cpu.clock.advance_to(pending.release_at)
    return pending.finish()


# -- proof of ownership --------------------------------------------------------


def proof_of_ownership(handle, nonce):
    return tee.attest(handle, lp(nonce), basename=nonce)


# -- proof of luck -------------------------------------------------------------


def mine_delay(l, cfg):
    """Release delay: luckier (larger) draws are released sooner."""
    if not 0.0 <= l < 1.0:
        raise ValueError("l must lie in [0, 1)")
    return round((1.0 - l) * cfg.max_mine_delay)


def pol_round(handle, block):
    handle.round_block = block
    handle.round_time = tee.trusted_time(handle)


@dataclass
class PendingLuck(PendingAttestation):
    l: float = 0.0
    delay: int = 0
    nonce: bytes = b""

    def finish(self):
        return LuckProof(self.nonce, self.l, super().finish())


class Mined(NamedTuple):
    proof: LuckProof
    release_delay: int


def begin_pol_mine(handle, header, previous_block, cfg, basename=None):
    """Run the checks and the draw; the proof is released ``delay`` ms later."""
    round_block = handle.round_block
    if round_block is None:
        raise NoRound("no round in progress")
    if header.parent != previous_block.digest():
        raise BadLink("header does not extend previous_block")
    if previous_block.parent != round_block.parent:
        raise WrongParent("previous_block is not a sibling of the round block")
    if tee.trusted_time(handle) < handle.round_time + cfg.round_time:
        raise TooEarly("round time has not elapsed")
    handle.round_block = None
    handle.round_time = None
    l = tee.random_draw(handle)
    delay = mine_delay(l, cfg)
    nonce = header.digest()
    return PendingLuck(
        handle,
        handle.cpu.clock.now + delay,
        encode_luck_payload(nonce, l),
        basename,
        l=l,
        delay=delay,
        nonce=nonce,
    )


def pol_mine(handle, header, previous_block, cfg, basename=None):
    pending = begin_pol_mine(handle, header, previous_block, cfg, basename)
    handle.cpu.clock.advance_to(pending.release_at)
    return Mined(pending.finish(), pending.delay)
