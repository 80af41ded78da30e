"""Blocks, chains, and the chain algorithms: commit, luck, valid.

A :class:`Chain` is a persistent singly-linked list (each node points at its
prefix), so appending is O(1), prefixes are shared between forks, and a
chain value never changes once built. Each node caches the running luck sum,
accumulated in block order, and the running encoded size.
"""
import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

from . import primitives, tee
from .encoding import Reader, lp, sha256, u32
from .errors import DecodeError
from .primitives import LuckProof

log = logging.getLogger(__name__)

ZERO_DIGEST = tee.ZERO_DIGEST
MAX_PAYLOAD = 64 * 1024
SNAPSHOT_MAGIC = b"LUCKCHN1"
KIND_BLOCKS = 0
KIND_SUPERBLOCKS = 1


def tx_digest(payload):
    return hashlib.sha256(b"luckchain/tx" + payload).digest()


@dataclass(frozen=True)
class Transaction:
    tx_id: bytes
    payload: bytes

    @classmethod
    def from_payload(cls, payload):
        payload = bytes(payload)
        return cls(tx_digest(payload), payload)

    def well_formed(self):
        return len(self.payload) <= MAX_PAYLOAD and self.tx_id == tx_digest(self.payload)


def tx_root(tx_ids):
    return sha256(b"luckchain/txroot", *tx_ids)


@dataclass(frozen=True)
class BlockHeader:
    parent: bytes
    tx_root: bytes

    @classmethod
    def build(cls, parent, transactions):
        return cls(parent, tx_root([tx.tx_id for tx in transactions]))

    def digest(self):
        return sha256(b"luckchain/header", self.parent, self.tx_root)


class GenesisSentinel:
    """Stand-in "previous block" for the empty chain.

    Its digest is the zero digest (the first block's parent). Its own parent
    is a distinct marker so that a first block is never mistaken for a
    sibling of the sentinel by the round-restart check.
    """

    parent = b"\xff" * 32

    def digest(self):
        return ZERO_DIGEST

    def __repr__(self):
        return "GENESIS"


GENESIS = GenesisSentinel()


@dataclass(frozen=True, eq=False)
class Block:
    parent: bytes
    transactions: Tuple[Transaction, ...]
    proof: LuckProof

    @property
    def header(self):
        return BlockHeader.build(self.parent, self.transactions)

    @property
    def luck_value(self):
        return self.proof.l

    @property
    def tx_ids(self):
        return [tx.tx_id for tx in self.transactions]

    @cached_property
    def encoded(self):
        out = [lp(self.parent), u32(len(self.transactions))]
        for tx in self.transactions:
            out += [lp(tx.tx_id), lp(tx.payload)]
        out.append(lp(self.proof.attestation.encode()))
        return b"".join(out)

    def encode(self):
        return self.encoded

    @classmethod
    def decode(cls, data):
        r = Reader(data)
        parent = r.lp(max_len=32)
        count = r.u32()
        txs = []
        for _ in range(count):
            tx_id = r.lp(max_len=32)
            txs.append(Transaction(tx_id, r.lp(max_len=MAX_PAYLOAD)))
        att = tee.Attestation.decode(r.lp())
        r.finish()
        return cls(parent, tuple(txs), LuckProof.from_attestation(att))

    @cached_property
    def _digest(self):
        return sha256(b"luckchain/block", self.encoded)

    def digest(self):
        return self._digest

    def __eq__(self, other):
        return isinstance(other, Block) and self._digest == other._digest

    def __hash__(self):
        return hash(self._digest)


def block_digest(block):
    """Digest of a block; ``None`` and the genesis sentinel map to zeros."""
    if block is None:
        return ZERO_DIGEST
    return block.digest()


class Chain:
    """Immutable chain of blocks (or super-blocks), earliest first."""

    __slots__ = ("prev", "block", "length", "luck", "size", "tx_index", "head_digest")

    def __init__(self, prev=None, block=None):
        self.prev = prev
        self.block = block
        if block is None:
            self.length = 0
            self.luck = 0.0
            self.size = 0
            self.tx_index = frozenset()
            self.head_digest = ZERO_DIGEST
        else:
            self.length = prev.length + 1
            self.luck = prev.luck + block.luck_value
            self.size = prev.size + 4 + len(block.encode())
            ids = block.tx_ids
            self.tx_index = prev.tx_index.union(ids) if ids else prev.tx_index
            self.head_digest = block.digest()

    @classmethod
    def of(cls, blocks):
        chain = EMPTY
        for block in blocks:
            chain = chain.append(block)
        return chain

    def append(self, block):
        return Chain(self, block)

    @property
    def latest(self):
        return self.block

    @property
    def blocks(self):
        out = []
        node = self
        while node.block is not None:
            out.append(node.block)
            node = node.prev
        out.reverse()
        return out

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self):
        return self.length

    def __eq__(self, other):
        return (
            isinstance(other, Chain)
            and self.length == other.length
            and self.head_digest == other.head_digest
        )

    def __hash__(self):
        return hash((self.length, self.head_digest))

    def __repr__(self):
        return f"Chain(length={self.length}, luck={self.luck:.6f}, head={self.head_digest.hex()[:12]})"

    def latest_or_genesis(self):
        return GENESIS if self.block is None else self.block

    def ancestor(self, length):
        node = self
        while node.length > length:
            node = node.prev
        return node

    def common_prefix(self, other):
        a, b = self.ancestor(other.length), other.ancestor(self.length)
        while a is not b and a.head_digest != b.head_digest:
            a, b = a.prev, b.prev
        return a

    def suffix_after(self, prefix):
        out = []
        node = self
        while node.length > prefix.length:
            out.append(node.block)
            node = node.prev
        out.reverse()
        return out

    def contains_tx(self, tx_id):
        return tx_id in self.tx_index


EMPTY = Chain()


def valid_transactions(txs):
    seen = set()
    for tx in txs:
        if not isinstance(tx, Transaction) or not tx.well_formed() or tx.tx_id in seen:
            return False
        seen.add(tx.tx_id)
    return True


# -- commit --------------------------------------------------------------------


@dataclass
class PendingCommit:
    """A commit whose proof of luck has not been released yet."""

    chain: Chain
    transactions: Tuple[Transaction, ...]
    parent: bytes
    mining: primitives.PendingLuck

    @property
    def release_at(self):
        return self.mining.release_at

    @property
    def l(self):
        return self.mining.l

    def finish(self):
        proof = self.mining.finish()
        return self.chain.append(Block(self.parent, self.transactions, proof))


def begin_commit(new_transactions, chain, handle, cfg, basename=None):
    new_transactions = tuple(new_transactions)
    if not valid_transactions(new_transactions):
        raise ValueError("refusing to mine invalid transactions")
    previous = chain.latest_or_genesis()
    parent = previous.digest()
    header = BlockHeader.build(parent, new_transactions)
    mining = primitives.begin_pol_mine(handle, header, previous, cfg, basename)
    return PendingCommit(chain, new_transactions, parent, mining)


def commit(new_transactions, chain, handle, cfg):
    """Extend ``chain`` with a freshly mined block; ``chain`` itself is untouched."""
    pending = begin_commit(new_transactions, chain, handle, cfg)
    handle.cpu.clock.advance_to(pending.release_at)
    return pending.finish()


# -- luck / valid --------------------------------------------------------------


def luck(chain):
    """Sum of the blocks' luck values in block order."""
    return chain.luck


def check_block(block, expected_parent, registry, measurement):
    """Name of the first failing check for ``block``, or ``None`` if it passes."""
    if block.parent != expected_parent:
        return "parent"
    if not valid_transactions(block.transactions):
        return "transactions"
    verdict = tee.verify_attestation(block.proof.attestation, measurement, registry)
    if not verdict.valid:
        return "attestation"
    try:
        nonce, l = primitives.decode_luck_payload(verdict.payload)
    except DecodeError:
        return "proof-data"
    if nonce != block.header.digest() or nonce != block.proof.nonce or l != block.proof.l:
        return "nonce"
    return None


def diagnose(chain, registry, measurement=primitives.POL_MEASUREMENT, check=check_block):
    """First failing (block index, check) in earliest-to-latest order, else None."""
    previous = ZERO_DIGEST
    for index, block in enumerate(chain.blocks):
        failure = check(block, previous, registry, measurement)
        if failure is not None:
            return index, failure
        previous = block.digest()
    return None


def valid(chain, registry, measurement=primitives.POL_MEASUREMENT):
    return diagnose(chain, registry, measurement) is None


class ChainValidator:
    """``valid`` with memoisation of already-validated prefixes.

    Chains share prefixes, so only the blocks past the longest known-valid
    prefix are checked. The cache is dropped whenever the registry changes.
    """

    def __init__(self, registry, measurement=primitives.POL_MEASUREMENT, check=check_block):
        self.registry = registry
        self.measurement = measurement
        self.check = check
        self._known = {ZERO_DIGEST: 0}
        self._version = registry.version

    def __call__(self, chain):
        if self._version != self.registry.version:
            self._known = {ZERO_DIGEST: 0}
            self._version = self.registry.version
        node = chain
        suffix = []
        while self._known.get(node.head_digest) != node.length:
            suffix.append(node)
            node = node.prev
        previous = node.head_digest
        for item in reversed(suffix):
            if self.check(item.block, previous, self.registry, self.measurement) is not None:
                return False
            previous = item.head_digest
            self._known[previous] = item.length
        return True


# -- snapshots -----------------------------------------------------------------


def encode_chain(chain, kind=KIND_BLOCKS):
    out = [SNAPSHOT_MAGIC, bytes((kind,)), u32(chain.length)]
    out += [lp(block.encode()) for block in chain.blocks]
    return b"".join(out)


def decode_chain(data):
    """Parse a snapshot; returns ``(kind, chain)``."""
    r = Reader(data)
    if r.take(len(SNAPSHOT_MAGIC)) != SNAPSHOT_MAGIC:
        raise DecodeError("not a chain snapshot")
    kind = r.u8()
    if kind == KIND_BLOCKS:
        item = Block
    elif kind == KIND_SUPERBLOCKS:
        from .superblock import SuperBlock as item
    else:
        raise DecodeError(f"unknown snapshot kind {kind}")
    count = r.u32()
    blocks = [item.decode(r.lp()) for _ in range(count)]
    r.finish()
    return kind, Chain.of(blocks)
