"""Luckiest-m super-blocks.

A super-block merges the m luckiest blocks mined on one parent, at most one
per physical CPU (told apart by their name-base pseudonyms, with the parent
digest as basename). Its luck is the smallest of the m included values, so a
handful of compromised CPUs cannot set it on their own.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

from . import primitives, tee
from .encoding import Reader, lp, sha256, u32
from .errors import DecodeError, InsufficientProofs
from .ledger import MAX_PAYLOAD, Block, BlockHeader, Transaction, tx_root, valid_transactions
from .primitives import LuckProof


@dataclass(frozen=True, eq=False)
class SuperBlock:
    parent: bytes
    merged_transactions: Tuple[Transaction, ...]
    proofs: Tuple[LuckProof, ...]
    member_tx_ids: Tuple[Tuple[bytes, ...], ...]

    @property
    def luck_value(self):
        return superblock_luck(self)

    @property
    def tx_ids(self):
        return [tx.tx_id for tx in self.merged_transactions]

    @property
    def transactions(self):
        return self.merged_transactions

    @property
    def pseudonyms(self):
        return [p.attestation.pseudonym for p in self.proofs]

    @cached_property
    def encoded(self):
        out = [lp(self.parent), u32(len(self.merged_transactions))]
        for tx in self.merged_transactions:
            out += [lp(tx.tx_id), lp(tx.payload)]
        out.append(u32(len(self.proofs)))
        for proof, ids in zip(self.proofs, self.member_tx_ids):
            out.append(lp(proof.attestation.encode()))
            out.append(u32(len(ids)))
            out += [lp(i) for i in ids]
        return b"".join(out)

    def encode(self):
        return self.encoded

    def raw_size(self):
        """Encoded size if every member's transactions were stored separately."""
        by_id = {tx.tx_id: tx for tx in self.merged_transactions}
        extra = 0
        seen = set()
        for ids in self.member_tx_ids:
            for i in ids:
                if i in seen:
                    tx = by_id[i]
                    extra += 8 + len(tx.tx_id) + len(tx.payload)
                seen.add(i)
        return len(self.encoded) + extra

    @classmethod
    def decode(cls, data):
        r = Reader(data)
        parent = r.lp(max_len=32)
        txs = []
        for _ in range(r.u32()):
            tx_id = r.lp(max_len=32)
            txs.append(Transaction(tx_id, r.lp(max_len=MAX_PAYLOAD)))
        proofs, members = [], []
        for _ in range(r.u32()):
            att = tee.Attestation.decode(r.lp())
            proofs.append(LuckProof.from_attestation(att))
            members.append(tuple(r.lp(max_len=32) for _ in range(r.u32())))
        r.finish()
        if not proofs:
            raise DecodeError("super-block without proofs")
        return cls(parent, tuple(txs), tuple(proofs), tuple(members))

    @cached_property
    def _digest(self):
        return sha256(b"luckchain/superblock", self.encoded)

    def digest(self):
        return self._digest

    def __eq__(self, other):
        return isinstance(other, SuperBlock) and self._digest == other._digest

    def __hash__(self):
        return hash(self._digest)


def _as_block(candidate):
    if isinstance(candidate, Block):
        return candidate
    block, proof = candidate
    if proof is not block.proof:
        block = Block(block.parent, block.transactions, proof)
    return block


def _rank(block):
    return (-block.proof.l, block.proof.nonce, block.digest())


def luckiest_per_cpu(blocks):
    """Keep the luckiest block for each pseudonym."""
    best = {}
    for block in blocks:
        key = block.proof.attestation.pseudonym
        if key is None:
            raise ValueError("super-block members need name-base proofs")
        held = best.get(key)
        if held is None or _rank(block) < _rank(held):
            best[key] = block
    return list(best.values())


def merge_luckiest(candidates, m):
    """Deterministically merge the m luckiest distinct-CPU candidates.

    ``candidates`` are blocks (or ``(block, proof)`` pairs) on a common
    parent. The result does not depend on candidate order.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    blocks = [_as_block(c) for c in candidates]
    parents = {b.parent for b in blocks}
    if len(parents) > 1:
        raise ValueError("candidates extend different parents")
    chosen = sorted(luckiest_per_cpu(blocks), key=_rank)[:m]
    if len(chosen) < m:
        raise InsufficientProofs(f"{len(chosen)} distinct CPUs, need {m}")
    merged = {}
    for block in chosen:
        for tx in block.transactions:
            merged.setdefault(tx.tx_id, tx)
    return SuperBlock(
        parent=chosen[0].parent,
        merged_transactions=tuple(merged[k] for k in sorted(merged)),
        proofs=tuple(b.proof for b in chosen),
        member_tx_ids=tuple(tuple(b.tx_ids) for b in chosen),
    )


def superblock_luck(sb):
    return sb.proofs[-1].l


def check_member(block, registry, measurement):
    """Name of the first failing check for a candidate block, or ``None``."""
    att = block.proof.attestation
    if att.mode is not tee.Mode.NAME_BASE or att.basename != block.parent:
        return "basename"
    if not valid_transactions(block.transactions):
        return "transactions"
    verdict = tee.verify_attestation(att, measurement, registry)
    if not verdict.valid:
        return "attestation"
    if block.proof.nonce != block.header.digest():
        return "nonce"
    return None


def check_superblock(sb, expected_parent, registry, measurement=primitives.POL_MEASUREMENT, m=None):
    """Name of the first failing check for ``sb``, or ``None`` if it passes."""
    if sb.parent != expected_parent:
        return "parent"
    if not sb.proofs or len(sb.proofs) != len(sb.member_tx_ids):
        return "structure"
    if m is not None and len(sb.proofs) != m:
        return "proof-count"
    if not valid_transactions(sb.merged_transactions):
        return "transactions"
    merged_ids = sb.tx_ids
    if merged_ids != sorted(set(merged_ids)):
        return "transaction-order"
    union = set()
    seen = set()
    previous_l = None
    for proof, ids in zip(sb.proofs, sb.member_tx_ids):
        att = proof.attestation
        if att.mode is not tee.Mode.NAME_BASE or att.basename != sb.parent:
            return "basename"
        verdict = tee.verify_attestation(att, measurement, registry)
        if not verdict.valid:
            return "attestation"
        try:
            nonce, l = primitives.decode_luck_payload(verdict.payload)
        except DecodeError:
            return "proof-data"
        if nonce != proof.nonce or l != proof.l:
            return "proof-data"
        if att.pseudonym in seen:
            return "pseudonym"
        seen.add(att.pseudonym)
        if previous_l is not None and not l < previous_l:
            return "order"
        previous_l = l
        if len(set(ids)) != len(ids):
            return "transactions"
        if nonce != BlockHeader(sb.parent, tx_root(ids)).digest():
            return "nonce"
        union.update(ids)
    if union != set(merged_ids):
        return "merge"
    return None


def validate_superblock(sb, registry, measurement=primitives.POL_MEASUREMENT, m=None):
    return check_superblock(sb, sb.parent, registry, measurement, m) is None


def superchain_checker(m):
    """Per-item check for :class:`~luckchain.ledger.ChainValidator` on super-block chains."""

    def check(sb, expected_parent, registry, measurement):
        if not isinstance(sb, SuperBlock):
            return "structure"
        return check_superblock(sb, expected_parent, registry, measurement, m)

    return check


def valid_superchain(chain, registry, m=None, measurement=primitives.POL_MEASUREMENT):
    previous = tee.ZERO_DIGEST
    for sb in chain.blocks:
        if not isinstance(sb, SuperBlock) or check_superblock(sb, previous, registry, measurement, m):
            return False
        previous = sb.digest()
    return True
