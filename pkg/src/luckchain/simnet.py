"""Deterministic discrete-event network simulator.

Events run in (due, seq) order on one thread. The topology is a complete
graph with per-edge latency; partitions drop cross-group traffic both when a
message is sent and when it would be delivered. Every executed event is
folded into a running digest, so two runs of the same scenario can be
compared by one hash.
"""
import csv
import hashlib
import heapq
import itertools
import json
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import adversary, ledger, primitives, tee
from .encoding import sha256
from .errors import ConfigurationError, PowExhausted
from .protocol import CANDIDATE, CHAIN, TRANSACTION, Message
from .superblock import superchain_checker

log = logging.getLogger(__name__)

SNAPSHOT_OVERHEAD = len(ledger.SNAPSHOT_MAGIC) + 1 + 4
REQUEST_BYTES = 40


@dataclass(frozen=True)
class LatencyModel:
    base: int = 100
    jitter: float = 150.0
    overrides: Dict[Tuple[int, int], Tuple[int, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.base < 0 or self.jitter < 0:
            raise ConfigurationError("latency base and jitter must be non-negative")
        for edge, (base, jitter) in self.overrides.items():
            if base < 0 or jitter < 0:
                raise ConfigurationError(f"negative latency override on edge {edge}")

    def sample(self, rng, sender, receiver):
        base, jitter = self.overrides.get((sender, receiver), (self.base, self.jitter))
        if jitter == 0:
            return base
        return base + int(rng.expovariate(1.0 / jitter))


@dataclass(frozen=True)
class PartitionSpec:
    groups: Tuple[frozenset, ...]
    start: int
    end: int

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(frozenset(g) for g in self.groups))
        if not self.start < self.end:
            raise ConfigurationError("partition must end after it starts")
        seen = set()
        for g in self.groups:
            if seen & g:
                raise ConfigurationError("partition groups overlap")
            seen |= g

    def validate(self, n):
        covered = set().union(*self.groups)
        if covered != set(range(n)):
            raise ConfigurationError("partition groups must cover every participant exactly once")


def validate_partitions(partitions, n):
    ordered = sorted(partitions, key=lambda p: p.start)
    for p in ordered:
        p.validate(n)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise ConfigurationError("partition specs overlap in time")


@dataclass
class RoundSummary:
    round: int
    winner: Optional[int]
    winner_l: Optional[float]
    chain_luck: Optional[float]
    messages: int
    bytes: int


@dataclass
class EventTrace:
    consensus: str
    seed: int
    participants: int
    rounds: List[RoundSummary]
    final_chains: Dict[int, object]
    canonical: object
    honest: Tuple[int, ...]
    counters: Dict[str, int]
    convergence: List[dict]
    sync_spread: List[Tuple[int, int]]
    adversary: Dict[str, object]
    digest: str
    events: Optional[List[dict]] = None

    def all_converged(self):
        heads = {self.final_chains[i].head_digest for i in self.honest}
        return len(heads) == 1

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for event in self.events or ():
                fh.write(json.dumps(event, sort_keys=True, separators=(",", ":")) + "\n")

    def write_summary(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "winner", "winner_l", "chain_luck", "messages", "bytes"])
            for r in self.rounds:
                w.writerow([
                    r.round,
                    "" if r.winner is None else r.winner,
                    "" if r.winner_l is None else repr(r.winner_l),
                    "" if r.chain_luck is None else repr(r.chain_luck),
                    r.messages,
                    r.bytes,
                ])


def _jsonable(fields):
    return [f.hex() if isinstance(f, bytes) else f for f in fields]


def _hex(digest):
    return digest.hex()[:16]


class Simulator:
    """One simulation instance. Also serves as the participants' network port."""

    def __init__(self, scenario, record_events=False):
        self.scenario = scenario
        self.cfg = scenario.primitive_config()
        self.n = scenario.participants
        self.horizon = scenario.horizon
        self.latency = scenario.latency
        self.header_first = scenario.header_first
        self.clock = tee.SimClock()
        self.registry = tee.VendorRegistry()
        self.rng = random.Random(f"luckchain/net/{scenario.seed}")
        self.record_events = record_events
        self.events = [] if record_events else None
        self._hash = hashlib.sha256()
        self._queue = []
        self._seq = itertools.count()
        self._cancelled = set()
        self._groups = None
        self.counters = Counter()
        self._round_traffic = defaultdict(lambda: [0, 0])
        self.miners = {}
        self.convergence = []
        self._heads = Counter()
        self._pending_heal = None
        self._round_dues = defaultdict(dict)
        self.adversary_log = []
        self.superblock_m = scenario.m if scenario.consensus == "superblock" else None

        offsets = scenario.clock_offsets or [0] * self.n
        cpus = [
            tee.create_cpu(scenario.seed, i, self.registry, self.clock, offsets[i])
            for i in range(self.n)
        ]
        self.cpus = cpus
        check = superchain_checker(self.superblock_m) if self.superblock_m else ledger.check_block
        self.validator = ledger.ChainValidator(self.registry, primitives.POL_MEASUREMENT, check)
        self.roles = adversary.assign_roles(scenario.adversaries, self.n)
        self.nodes = [
            adversary.build_participant(
                i,
                tee.start_enclave(cpus[i], primitives.POL_MEASUREMENT),
                self.cfg,
                self.validator,
                self,
                self.roles,
                superblock_m=self.superblock_m,
                merge_wait=scenario.merge_wait,
            )
            for i in range(self.n)
        ]
        self.honest = tuple(i for i, node in enumerate(self.nodes) if node.honest)
        self._heads[ledger.ZERO_DIGEST] = len(self.honest)
        self._last_head = {pid: ledger.ZERO_DIGEST for pid in self.honest}

    # -- port used by participants ---------------------------------------------

    @property
    def now(self):
        return self.clock.now

    def _push(self, due, kind, *args):
        seq = next(self._seq)
        heapq.heappush(self._queue, (due, seq, kind, args))
        return seq

    def cancel(self, token):
        self._cancelled.add(token)

    def schedule_callback(self, pid, due):
        return self._push(due, "mine_callback", pid)

    def schedule_release(self, pid, pending):
        return self._push(pending.release_at, "proof_release", pid, pending)

    def schedule_merge(self, pid, due):
        return self._push(due, "merge", pid)

    def mining_allowed(self, node):
        return node.chain.length < self.horizon

    def _crosses(self, a, b):
        groups = self._groups
        return groups is not None and groups[a] != groups[b]

    def _cost(self, msg):
        body = msg.body
        if msg.kind == CHAIN:
            return SNAPSHOT_OVERHEAD + body.size, body.length
        if msg.kind == CANDIDATE:
            return len(body.encode()), None
        return 4 + len(body.tx_id) + 4 + len(body.payload), None

    def multicast(self, sender, msg, targets):
        size, round_index = self._cost(msg)
        if round_index is None:
            round_index = self.nodes[sender].chain.length + 1
        traffic = self._round_traffic[round_index]
        self.counters["messages_sent"] += 1
        now = self.clock.now
        for to in sorted(targets):
            if to == sender:
                continue
            self.counters["fanout"] += 1
            if self._crosses(sender, to):
                self.counters["dropped"] += 1
                continue
            traffic[0] += 1
            traffic[1] += size
            self.counters["bytes"] += size
            due = now + self.latency.sample(self.rng, sender, to)
            self._push(due, "deliver", to, sender, msg)

    def broadcast(self, sender, msg):
        self.multicast(sender, msg, range(self.n))

    def send_to_self(self, pid, msg):
        self.counters["self_deliveries"] += 1
        self._record("self_deliver", pid, msg.kind, _hex(msg.body.head_digest))
        self.nodes[pid].receive(msg, pid)

    def note_adoption(self, pid, chain):
        if pid not in self._last_head:
            return
        # multiset of honest heads, so convergence checks are O(1)
        old = self._last_head[pid]
        self._heads[old] -= 1
        if not self._heads[old]:
            del self._heads[old]
        self._last_head[pid] = chain.head_digest
        self._heads[chain.head_digest] += 1
        if len(self._heads) == 1 and self._pending_heal is not None:
            self.convergence.append(
                {"heal": self._pending_heal, "converged": self.now, "length": chain.length}
            )
            self._pending_heal = None

    def note_round(self, pid, round_index, due):
        if pid in self.honest:
            self._round_dues[round_index][pid] = due

    def note_mined(self, pid, block):
        self.miners[block.digest()] = pid

    def note_skip(self, pid, reason):
        self.counters["skipped_rounds"] += 1
        self._record("skip", pid, reason)

    def note_adversary(self, pid, action, obj):
        self.adversary_log.append({"t": self.now, "participant": pid, "action": action})
        self._record("adversary_step", pid, action)

    # -- trace -----------------------------------------------------------------

    def _record(self, kind, *fields):
        line = repr((self.clock.now, kind) + fields)
        self._hash.update(line.encode())
        if self.record_events:
            self.events.append({"t": self.clock.now, "event": kind, "data": _jsonable(fields)})

    # -- partitions --------------------------------------------------------------

    def _partition_start(self, spec):
        groups = {}
        for index, group in enumerate(spec.groups):
            for pid in group:
                groups[pid] = index
        self._groups = groups
        self._record("partition_change", "start", [sorted(g) for g in spec.groups])

    def _partition_end(self, spec):
        self._groups = None
        self._record("partition_change", "heal")
        self._pending_heal = self.now
        if len(self._heads) == 1:
            self.convergence.append({"heal": self.now, "converged": self.now, "length": None})
            self._pending_heal = None
        for group in spec.groups:
            members = [pid for pid in sorted(group) if pid in self.honest]
            if not members:
                continue
            best = max(members, key=lambda pid: (self.nodes[pid].chain.luck, -pid))
            chain = self.nodes[best].chain
            if chain.length:
                self.counters["heal_kicks"] += 1
                self.broadcast(best, Message(CHAIN, chain, best))

    # -- main loop -----------------------------------------------------------------

    def _inject_transactions(self, round_index):
        sc = self.scenario
        for k in range(sc.transactions_per_round):
            payload = f"tx/{sc.seed}/{round_index}/{k}".encode()
            target = self.rng.randrange(self.n)
            self._push(self.now, "client_tx", target, ledger.Transaction.from_payload(payload))
        if round_index + 1 < self.horizon:
            self._push(self.now + self.cfg.round_time, "workload", round_index + 1)

    def run(self):
        sc = self.scenario
        delays = sc.start_delays or [0] * self.n
        for pid in range(self.n):
            self._push(delays[pid], "start", pid)
        for spec in sc.partitions:
            self._push(spec.start, "partition_start", spec)
            self._push(spec.end, "partition_end", spec)
        if sc.transactions_per_round:
            self._push(self.cfg.round_time // 2, "workload", 0)

        nodes = self.nodes
        queue = self._queue
        cancelled = self._cancelled
        counters = self.counters
        while queue:
            due, seq, kind, args = heapq.heappop(queue)
            if seq in cancelled:
                cancelled.discard(seq)
                continue
            self.clock.advance_to(due)
            if kind == "deliver":
                to, sender, msg = args
                if self._crosses(sender, to):
                    counters["dropped"] += 1
                    self._record("drop", to, sender, msg.kind)
                    continue
                counters["delivered"] += 1
                head = msg.body.head_digest if msg.kind == CHAIN else b""
                self._record("deliver", to, sender, msg.kind, head[:8])
                node = nodes[to]
                if self.header_first and msg.kind == CHAIN:
                    self._header_first_cost(node, msg.body)
                node.receive(msg, sender)
            elif kind == "mine_callback":
                self._record("mine_callback", args[0])
                nodes[args[0]].handle_mine_callback()
            elif kind == "proof_release":
                pid, pending = args
                self._record("proof_release", pid)
                nodes[pid].handle_release(pending)
            elif kind == "merge":
                self._record("merge", args[0])
                nodes[args[0]].handle_merge()
            elif kind == "start":
                self._record("start", args[0])
                nodes[args[0]].start()
            elif kind == "partition_start":
                self._partition_start(args[0])
            elif kind == "partition_end":
                self._partition_end(args[0])
            elif kind == "workload":
                self._inject_transactions(args[0])
            elif kind == "client_tx":
                pid, tx = args
                self._record("client_tx", pid, tx.tx_id[:8])
                nodes[pid].receive(Message(TRANSACTION, tx), None)
        return self._trace()

    def _header_first_cost(self, node, chain):
        head = chain.latest
        header = 64 + len(head.encode()) - sum(4 + len(t.tx_id) + 4 + len(t.payload) for t in head.transactions)
        self.counters["hf_messages"] += 1
        self.counters["hf_bytes"] += header
        if chain.luck > node.chain.luck:
            body = SNAPSHOT_OVERHEAD + chain.size - header
            self.counters["hf_messages"] += 2
            self.counters["hf_bytes"] += REQUEST_BYTES + body
            self.counters["hf_requests"] += 1

    def _trace(self):
        finals = {i: node.chain for i, node in enumerate(self.nodes)}
        honest = self.honest or tuple(range(self.n))
        canonical = max((finals[i] for i in honest), key=lambda c: c.luck)
        rounds = []
        nodes = []
        node = canonical
        while node.block is not None:
            nodes.append(node)
            node = node.prev
        for node in reversed(nodes):
            block = node.block
            msgs, nbytes = self._round_traffic.get(node.length, (0, 0))
            rounds.append(
                RoundSummary(node.length, self.miners.get(block.digest()), block.luck_value, node.luck, msgs, nbytes)
            )
        spread = []
        for index in sorted(self._round_dues):
            dues = self._round_dues[index]
            if len(dues) == len(self.honest):
                spread.append((index, max(dues.values()) - min(dues.values())))
        counters = dict(self.counters)
        if self.superblock_m:
            # merged size on the wire vs. members stored separately
            counters["superblock_bytes"] = sum(len(b.encode()) for b in canonical.blocks)
            counters["superblock_raw_bytes"] = sum(b.raw_size() for b in canonical.blocks)
        counters.setdefault("dropped", 0)
        counters.setdefault("delivered", 0)
        counters.setdefault("fanout", 0)
        adv = {"log": self.adversary_log}
        coalitions = {id(shared): shared for _, shared in self.roles.values() if shared is not None}
        if coalitions:
            c = next(iter(coalitions.values()))
            fork_block = None
            if c.fork_base is not None and canonical.length > c.fork_base:
                fork_block = canonical.ancestor(c.fork_base + 1).block
            adv.update(
                fork_base=c.fork_base,
                revealed=c.revealed,
                attacker_won=fork_block is not None and self.miners.get(fork_block.digest()) in c.members,
            )
        self._hash.update(b"final")
        for i in range(self.n):
            self._hash.update(finals[i].head_digest)
        return EventTrace(
            consensus=self.scenario.consensus,
            seed=self.scenario.seed,
            participants=self.n,
            rounds=rounds,
            final_chains=finals,
            canonical=canonical,
            honest=honest,
            counters=counters,
            convergence=self.convergence,
            sync_spread=spread,
            adversary=adv,
            digest=self._hash.hexdigest(),
            events=self.events,
        )


# -- primitive exercise modes --------------------------------------------------------


def _run_primitive(scenario, record_events=False):
    """Every participant invokes one TEE primitive per round; no chain is built.

    proof_of_work: the winner is the participant needing the fewest hash
    evaluations (first to finish). proof_of_time: every participant sleeps
    ``pot_duration`` and is attested. proof_of_ownership: proofs are
    deduplicated by pseudonym.
    """
    cfg = scenario.primitive_config()
    clock = tee.SimClock()
    registry = tee.VendorRegistry()
    n = scenario.participants
    offsets = scenario.clock_offsets or [0] * n
    cpus = [tee.create_cpu(scenario.seed, i, registry, clock, offsets[i]) for i in range(n)]
    measurement = {
        "proof_of_work": primitives.POW_MEASUREMENT,
        "proof_of_time": primitives.POT_MEASUREMENT,
        "proof_of_ownership": primitives.POO_MEASUREMENT,
    }[scenario.consensus]
    h = hashlib.sha256()
    events = [] if record_events else None
    rounds = []
    counters = Counter()

    def record(kind, *fields):
        h.update(repr((clock.now, kind) + fields).encode())
        if events is not None:
            events.append({"t": clock.now, "event": kind, "data": _jsonable(fields)})

    for r in range(1, scenario.horizon + 1):
        clock.advance_to((r - 1) * cfg.round_time)
        nonce = sha256(b"luckchain/round", str(scenario.seed).encode(), str(r).encode())
        handles = [tee.start_enclave(cpu, measurement) for cpu in cpus]
        winner = None
        if scenario.consensus == "proof_of_work":
            best = None
            for pid, handle in enumerate(handles):
                try:
                    att, evals = primitives.tee_pow(handle, nonce, cfg.pow_difficulty, cfg.pow_max_iterations)
                except PowExhausted:
                    record("pow_exhausted", pid)
                    continue
                ok = tee.verify_attestation(att, measurement, registry).valid
                counters["hash_evaluations"] += evals
                record("pow", pid, evals, ok)
                if ok and (best is None or evals < best):
                    best, winner = evals, pid
        elif scenario.consensus == "proof_of_time":
            pendings = [primitives.begin_proof_of_time(hd, nonce, cfg.pot_duration) for hd in handles]
            clock.advance_to(clock.now + cfg.pot_duration)
            for pid, pending in enumerate(pendings):
                att = pending.finish()
                record("pot", pid, tee.verify_attestation(att, measurement, registry).valid)
            winner = None
        else:
            pseudonyms = set()
            for pid, handle in enumerate(handles):
                att = primitives.proof_of_ownership(handle, nonce)
                if tee.verify_attestation(att, measurement, registry).valid:
                    pseudonyms.add(att.pseudonym)
                record("poo", pid, att.pseudonym[:8])
            counters["unique_pseudonyms"] += len(pseudonyms)
        rounds.append(RoundSummary(r, winner, None, None, 0, 0))
    return EventTrace(
        consensus=scenario.consensus,
        seed=scenario.seed,
        participants=n,
        rounds=rounds,
        final_chains={i: ledger.EMPTY for i in range(n)},
        canonical=ledger.EMPTY,
        honest=tuple(range(n)),
        counters=dict(counters),
        convergence=[],
        sync_spread=[],
        adversary={},
        digest=h.hexdigest(),
        events=events,
    )


def run(scenario, record_events=False):
    """Execute ``scenario`` to its horizon and return the trace."""
    scenario.validate()
    if scenario.consensus in ("proof_of_work", "proof_of_time", "proof_of_ownership"):
        return _run_primitive(scenario, record_events)
    return Simulator(scenario, record_events).run()
