"""Per-participant proof-of-luck protocol.

A :class:`Participant` reacts to four kinds of stimulus delivered by the
simulator: transactions and chains from the network, its round callback
firing, and its enclave releasing a mined proof. The participant never talks
to peers directly; everything goes through a network port, which the
simulator implements.

In super-block mode each round's blocks are broadcast as candidates and
merged, after a short wait, into a super-block of the m luckiest.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

from . import primitives, tee
from .errors import EnclaveAssertion, InsufficientProofs
from .ledger import EMPTY, begin_commit
from .superblock import check_member, merge_luckiest

log = logging.getLogger(__name__)

TRANSACTION = "transaction"
CHAIN = "chain"
CANDIDATE = "candidate"


@dataclass(frozen=True)
class Message:
    kind: str
    body: Any
    # Senders are never authenticated; this is whatever the sender claims.
    claimed_sender: Optional[int] = None


@dataclass
class ParticipantState:
    id: int
    handle: Any
    current_chain: Any = EMPTY
    pending_txs: dict = field(default_factory=dict)
    drained_txs: dict = field(default_factory=dict)
    round_block: Optional[Any] = None
    callback_due: Optional[int] = None


class Participant:
    """An honest participant.

    Adversarial behaviours subclass this and override the ``_send``,
    ``_accepts`` and ``_start_mining`` hooks.
    """

    honest = True

    def __init__(self, pid, handle, cfg, validator, net, superblock_m=None, merge_wait=1500):
        self.state = ParticipantState(id=pid, handle=handle)
        self.cfg = cfg
        self.validator = validator
        self.net = net
        self.superblock_m = superblock_m
        self.merge_wait = merge_wait
        self._callback_token = None
        self._pool = {}
        self._merge_parent = None

    @property
    def id(self):
        return self.state.id

    @property
    def chain(self):
        return self.state.current_chain

    def __repr__(self):
        return f"{type(self).__name__}({self.id})"

    # -- hooks -------------------------------------------------------------

    def _send(self, msg):
        self.net.broadcast(self.id, msg)

    def _accepts(self, msg, sender):
        return True

    def _start_mining(self, transactions, chain, basename):
        return begin_commit(transactions, chain, self.state.handle, self.cfg, basename)

    # -- rounds ------------------------------------------------------------

    def start(self):
        self.new_round(self.state.current_chain)

    def new_round(self, chain):
        st = self.state
        st.round_block = chain.latest_or_genesis()
        primitives.pol_round(st.handle, st.round_block)
        if self._callback_token is not None:
            self.net.cancel(self._callback_token)
        st.callback_due = self.net.now + self.cfg.round_time
        self._callback_token = self.net.schedule_callback(self.id, st.callback_due)
        self.net.note_round(self.id, chain.length + 1, st.callback_due)

    # -- network handlers ---------------------------------------------------

    def receive(self, msg, sender=None):
        if not self._accepts(msg, sender):
            return
        if msg.kind == TRANSACTION:
            self.handle_transaction(msg.body)
        elif msg.kind == CHAIN:
            self.handle_chain(msg.body)
        elif msg.kind == CANDIDATE:
            self.handle_candidate(msg.body)

    def _knows_tx(self, tx_id):
        st = self.state
        return tx_id in st.pending_txs or tx_id in st.drained_txs or st.current_chain.contains_tx(tx_id)

    def handle_transaction(self, tx):
        if self._knows_tx(tx.tx_id) or not tx.well_formed():
            return
        self.state.pending_txs[tx.tx_id] = tx
        self._send(Message(TRANSACTION, tx, self.id))

    def handle_chain(self, chain):
        st = self.state
        if not chain.luck > st.current_chain.luck or not self.validator(chain):
            return False
        previous = st.current_chain
        st.current_chain = chain
        self._reconcile_mempool(previous, chain)
        self.net.note_adoption(self.id, chain)
        if self.superblock_m:
            self._pool = {k: v for k, v in self._pool.items() if k == chain.head_digest}
        if st.round_block is None or chain.latest.parent != st.round_block.parent:
            self.new_round(chain)
        self._send(Message(CHAIN, chain, self.id))
        return True

    def _reconcile_mempool(self, previous, chain):
        st = self.state
        # Transactions from abandoned blocks or our own drained batch go back
        # to the mempool unless the adopted chain already carries them.
        returning = dict(st.drained_txs)
        if chain.prev is not previous:
            base = previous.common_prefix(chain)
            for block in previous.suffix_after(base):
                for tx in block.transactions:
                    returning.setdefault(tx.tx_id, tx)
        st.drained_txs = {}
        returning.update(st.pending_txs)
        st.pending_txs = {k: tx for k, tx in returning.items() if not chain.contains_tx(k)}

    # -- mining ---------------------------------------------------------------

    def handle_mine_callback(self):
        st = self.state
        self._callback_token = None
        if st.round_block is None or not self.net.mining_allowed(self):
            return
        txs = list(st.pending_txs.values())
        chain = st.current_chain
        basename = chain.latest_or_genesis().digest() if self.superblock_m else None
        try:
            pending = self._start_mining(txs, chain, basename)
        except EnclaveAssertion as exc:
            self._rejoin(exc)
            return
        st.drained_txs.update(st.pending_txs)
        st.pending_txs = {}
        self.net.schedule_release(self.id, pending)
        if self.superblock_m:
            self._merge_parent = basename
            self.net.schedule_merge(self.id, self.net.now + self.cfg.max_mine_delay + self.merge_wait)

    def handle_release(self, pending):
        try:
            chain = pending.finish()
        except EnclaveAssertion as exc:
            self._rejoin(exc)
            return
        self.net.note_mined(self.id, chain.latest)
        if self.superblock_m:
            block = chain.latest
            self.handle_candidate(block)
            self._send(Message(CANDIDATE, block, self.id))
        else:
            self.net.send_to_self(self.id, Message(CHAIN, chain, self.id))

    def _rejoin(self, exc):
        """Give up this round's proof and take part again next round."""
        st = self.state
        log.info("participant %d skipped a round: %s", self.id, exc)
        self.net.note_skip(self.id, str(exc))
        if tee.read_counter(st.handle) != st.handle.counter_at_start:
            # another instance bumped the counter; relaunch our enclave
            st.handle = tee.start_enclave(st.handle.cpu, st.handle.measurement)
        self.new_round(st.current_chain)

    # -- super-block mode -------------------------------------------------------

    def handle_candidate(self, block):
        if block.parent != self.state.current_chain.head_digest:
            return
        if check_member(block, self.validator.registry, self.validator.measurement) is not None:
            return
        pool = self._pool.setdefault(block.parent, [])
        if all(b.digest() != block.digest() for b in pool):
            pool.append(block)

    def handle_merge(self):
        st = self.state
        parent = self._merge_parent
        self._merge_parent = None
        if parent is None or parent != st.current_chain.head_digest:
            return
        pool = self._pool.pop(parent, [])
        self._pool = {}
        try:
            sb = merge_luckiest(pool, self.superblock_m)
        except InsufficientProofs as exc:
            log.info("participant %d voids round: %s", self.id, exc)
            self.net.note_skip(self.id, str(exc))
            self.new_round(st.current_chain)
            return
        self.net.send_to_self(self.id, Message(CHAIN, st.current_chain.append(sb), self.id))
