"""Attacker behaviours for the simulator.

Controlled participants are :class:`~luckchain.protocol.Participant`
subclasses; they reach the network only through the same port as honest
ones. Attackers with honest TEEs can withhold, replay and spoof but cannot
choose their luck. A compromised TEE is modelled as a signing-oracle grant
on that CPU's key.
"""
from dataclasses import dataclass, field, replace

from . import primitives, tee
from .errors import ConfigurationError
from .ledger import Block
from .primitives import LuckProof, PrimitiveConfig
from .protocol import CANDIDATE, CHAIN, Message, Participant

KINDS = ("minority_fork", "withhold_reveal", "spoofer", "compromised_tee")
DEFAULT_FORGED_L = 0.999999


@dataclass(frozen=True)
class AdversarySpec:
    kind: str
    controlled: frozenset
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown adversary kind {self.kind!r}")
        object.__setattr__(self, "controlled", frozenset(self.controlled))
        if not self.controlled:
            raise ConfigurationError("adversary controls no participants")


def forge_attestation(compromised, payload, basename=None, measurement=primitives.POL_MEASUREMENT):
    """Attestation over arbitrary ``payload`` from a compromised CPU."""
    return tee.signing_oracle(compromised, measurement, payload, basename)


def forged_block(cpu, chain, transactions, l, basename=None):
    previous = chain.latest_or_genesis()
    parent = previous.digest()
    block = Block(parent, tuple(transactions), None)
    nonce = block.header.digest()
    att = forge_attestation(cpu, primitives.encode_luck_payload(nonce, l), basename)
    return Block(parent, tuple(transactions), LuckProof(nonce, l, att))


def spoof_send(adv, msg, claimed):
    """Broadcast ``msg`` from ``adv`` while claiming it came from ``claimed``."""
    adv.net.broadcast(adv.id, replace(msg, claimed_sender=claimed))


# -- private fork / withholding ----------------------------------------------


class ForkCoalition:
    """Shared state of a group mining a private fork.

    ``minority_fork``: go private once the chain reaches ``fork_round``
    blocks and reveal after ``fork_depth`` private blocks.
    ``withhold_reveal``: private from the start, reveal once the private
    chain reaches ``reveal_round`` blocks.
    """

    def __init__(self, spec):
        self.spec = spec
        self.members = spec.controlled
        p = spec.params
        if spec.kind == "minority_fork":
            self.fork_round = int(p.get("fork_round", 0))
            self.reveal_at = None
            self.depth = int(p.get("fork_depth", 10))
        else:
            self.fork_round = 0
            self.depth = None
            self.reveal_at = int(p.get("reveal_round", 10))
        self.forked = self.fork_round == 0
        self.fork_base = 0 if self.forked else None
        self.revealed = False
        self.revealed_chain = None

    @property
    def private(self):
        return self.forked and not self.revealed

    def step(self, chain_length):
        """Action due for a member whose chain just reached ``chain_length``."""
        if not self.forked:
            if chain_length >= self.fork_round:
                self.forked = True
                self.fork_base = chain_length
                return "fork"
            return None
        if self.revealed:
            return None
        target = self.reveal_at if self.reveal_at is not None else self.fork_base + self.depth
        if chain_length >= target:
            self.revealed = True
            return "reveal"
        return None


minority_fork_step = ForkCoalition.step


class PrivateForker(Participant):
    honest = False

    def __init__(self, *args, coalition, **kwargs):
        super().__init__(*args, **kwargs)
        self.coalition = coalition
        self._outside = None

    def _send(self, msg):
        if self.coalition.private:
            self.net.multicast(self.id, msg, self.coalition.members - {self.id})
        else:
            super()._send(msg)

    def _accepts(self, msg, sender):
        if self.coalition.private and msg.kind != "transaction":
            if sender is None or sender == self.id or sender in self.coalition.members:
                return True
            # watch the public chain without following it
            if msg.kind == CHAIN and (self._outside is None or msg.body.luck > self._outside.luck):
                self._outside = msg.body
            return False
        return True

    def handle_chain(self, chain):
        adopted = super().handle_chain(chain)
        if adopted:
            action = self.coalition.step(chain.length)
            if action == "reveal":
                self.coalition.revealed_chain = chain
                self.net.note_adversary(self.id, "reveal", chain)
                self.net.broadcast(self.id, Message(CHAIN, chain, self.id))
                self._catch_up()
            elif action == "fork":
                self.net.note_adversary(self.id, "fork", chain)
        elif not self.coalition.private:
            self._catch_up()
        return adopted

    def _catch_up(self):
        # back to honest behaviour: follow the public chain if it is luckier
        outside, self._outside = self._outside, None
        if outside is not None:
            super().handle_chain(outside)


# -- spoofing -----------------------------------------------------------------


class Spoofer(Participant):
    """Follows the protocol, and on each new height also replays its chain
    under a false sender id, pushes a tampered (invalid) luckier copy, and
    re-sends every transaction it knows."""

    honest = False

    def __init__(self, *args, victims=(), **kwargs):
        super().__init__(*args, **kwargs)
        self.victims = tuple(victims) or (0,)
        self._spoofed_height = 0

    def handle_chain(self, chain):
        adopted = super().handle_chain(chain)
        if adopted and chain.length > self._spoofed_height:
            self._spoofed_height = chain.length
            claimed = self.victims[chain.length % len(self.victims)]
            spoof_send(self, Message(CHAIN, chain), claimed)
            spoof_send(self, Message(CHAIN, tampered_chain(chain)), claimed)
            for tx in chain.latest.transactions:
                spoof_send(self, Message("transaction", tx), claimed)
            self.net.note_adversary(self.id, "spoof", chain)
        return adopted


def tampered_chain(chain, l=DEFAULT_FORGED_L):
    """Copy of ``chain`` whose head's attested payload is rewritten to claim luck ``l``.

    The signature is left as it was, so the attestation no longer verifies.
    """
    head = chain.latest
    att = head.proof.attestation
    fake = replace(att, payload=primitives.encode_luck_payload(head.proof.nonce, l))
    return chain.prev.append(Block(head.parent, head.transactions, LuckProof.from_attestation(fake)))


# -- compromised TEE ------------------------------------------------------------


class _ForgedRelease:
    def __init__(self, chain, block, release_at, extra=()):
        self.chain = chain
        self.block = block
        self.release_at = release_at
        self.extra = extra

    def finish(self):
        return self.chain.append(self.block)


class Forger(Participant):
    """Mines with forged proofs of luck instead of asking its enclave.

    In super-block mode it also pushes a second forged candidate under the
    same basename, which pseudonym deduplication must discard.
    """

    honest = False

    def __init__(self, *args, forge_l=DEFAULT_FORGED_L, **kwargs):
        super().__init__(*args, **kwargs)
        self.forge_l = forge_l
        self.state.handle.cpu.compromised = True

    def _start_mining(self, transactions, chain, basename):
        block = forged_block(self.state.handle.cpu, chain, transactions, self.forge_l, basename)
        extra = ()
        if self.superblock_m:
            twin_l = self.forge_l - (1.0 - self.forge_l) / 2
            extra = (forged_block(self.state.handle.cpu, chain, transactions, twin_l, basename),)
        release_at = self.net.now + primitives.mine_delay(self.forge_l, self.cfg)
        return _ForgedRelease(chain, block, release_at, extra)

    def handle_release(self, pending):
        super().handle_release(pending)
        for twin in getattr(pending, "extra", ()):
            self.net.note_adversary(self.id, "twin", twin)
            self._send(Message(CANDIDATE, twin, self.id))


def build_participant(pid, handle, cfg, validator, net, roles, **kwargs):
    """Instantiate the participant class ``roles`` assigns to ``pid``."""
    role = roles.get(pid)
    if role is None:
        return Participant(pid, handle, cfg, validator, net, **kwargs)
    spec, shared = role
    if spec.kind in ("minority_fork", "withhold_reveal"):
        return PrivateForker(pid, handle, cfg, validator, net, coalition=shared, **kwargs)
    if spec.kind == "spoofer":
        victims = spec.params.get("victims") or ()
        return Spoofer(pid, handle, cfg, validator, net, victims=victims, **kwargs)
    forge_l = float(spec.params.get("forge_l", DEFAULT_FORGED_L))
    return Forger(pid, handle, cfg, validator, net, forge_l=forge_l, **kwargs)


def assign_roles(specs, n):
    roles = {}
    for spec in specs:
        bad = [i for i in spec.controlled if not 0 <= i < n]
        if bad:
            raise ConfigurationError(f"adversary ids out of range: {sorted(bad)}")
        clash = spec.controlled & roles.keys()
        if clash:
            raise ConfigurationError(f"participants {sorted(clash)} assigned to two adversaries")
        shared = ForkCoalition(spec) if spec.kind in ("minority_fork", "withhold_reveal") else None
        for pid in spec.controlled:
            roles[pid] = (spec, shared)
    return roles


# -- super-block containment, without the network ------------------------------


@dataclass
class ContainmentReport:
    rounds: int
    honest_luck_rounds: int
    twin_rejections: int
    twin_attempts: int
    forged_wins: int
    valid_superblocks: int


def superblock_containment(rounds, honest=5, m=3, forge_l=DEFAULT_FORGED_L, seed=0):
    """Play ``rounds`` super-block rounds with one compromised CPU.

    Every round each honest CPU mines a name-base proof of luck on the
    current parent, the forger submits two forged proofs under the same
    basename, and the m luckiest distinct-CPU proofs are merged. Reports how
    often the super-block's luck was an honest draw and how often the twin
    forgery was discarded.
    """
    from .ledger import EMPTY, begin_commit
    from .superblock import merge_luckiest, superblock_luck, validate_superblock

    cfg = PrimitiveConfig()
    clock = tee.SimClock()
    registry = tee.VendorRegistry()
    handles = [
        tee.start_enclave(tee.create_cpu(seed, i, registry, clock), primitives.POL_MEASUREMENT)
        for i in range(honest + 1)
    ]
    forger = handles[-1].cpu
    forger.compromised = True
    chain = EMPTY
    report = ContainmentReport(rounds, 0, 0, 0, 0, 0)
    for _ in range(rounds):
        previous = chain.latest_or_genesis()
        basename = previous.digest()
        for h in handles[:-1]:
            primitives.pol_round(h, previous)
        clock.sleep(cfg.round_time)
        pendings = [begin_commit((), chain, h, cfg, basename) for h in handles[:-1]]
        clock.sleep(cfg.max_mine_delay)
        candidates = [p.finish().latest for p in pendings]
        honest_ls = {b.proof.l for b in candidates}
        first = forged_block(forger, chain, (), forge_l, basename)
        twin = forged_block(forger, chain, (), forge_l - (1.0 - forge_l) / 2, basename)
        sb = merge_luckiest(candidates + [first, twin], m)
        report.twin_attempts += 1
        if twin.proof not in sb.proofs:
            report.twin_rejections += 1
        if superblock_luck(sb) in honest_ls:
            report.honest_luck_rounds += 1
        if superblock_luck(sb) == forge_l:
            report.forged_wins += 1
        if validate_superblock(sb, registry, m=m):
            report.valid_superblocks += 1
        chain = chain.append(sb)
    return report
