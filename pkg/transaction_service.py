"""
Transaction Service for Rolechain
Bit-level nValue encodings, canonical wire serialization, digests and signatures
"""

import functools
import hashlib
import io
import logging
from dataclasses import dataclass, replace
from typing import BinaryIO, Iterable, List, Optional, Sequence, Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from errors import (
    CountOverflow, MalformedPayload, MalformedTransaction, TruncatedInput, UnsupportedVersion,
)
from models import (
    EMPTY_SIGNATURE, NULL_KEY, NULL_OUTPOINT, PUBKEY_SIZE, SIGNATURE_SIZE, UINT32_MAX, UINT64_MAX,
    AccountKey, OutPoint, PolicyPayload, RolePayload, RoleSet, Transaction, TxInput, TxMode, TxOutput,
)

logger = logging.getLogger(__name__)

# Role bits: U=0, A=1, C=2, L=3, M=4, lock=5
ROLE_BIT_U = 1 << 0
ROLE_BIT_A = 1 << 1
ROLE_BIT_C = 1 << 2
ROLE_BIT_L = 1 << 3
ROLE_BIT_M = 1 << 4
ROLE_BIT_LOCKED = 1 << 5
ROLE_LAYOUT_MASK = (1 << 6) - 1

# Policy layout: id bits 0-7, permanent bit 8, value bits 16-47
POLICY_PERMANENT_BIT = 1 << 8
POLICY_VALUE_SHIFT = 16
POLICY_LAYOUT_MASK = 0xFF | POLICY_PERMANENT_BIT | (UINT32_MAX << POLICY_VALUE_SHIFT)

OUTPOINT_SIZE = 36
INPUT_SIZE = OUTPOINT_SIZE + 1 + PUBKEY_SIZE + SIGNATURE_SIZE
OUTPUT_SIZE = 8 + PUBKEY_SIZE
VALID_VERSIONS = frozenset(mode.value for mode in TxMode)


def double_sha256(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


# nValue encodings

def encode_role_nvalue(payload: RolePayload) -> int:
    roles = payload.roles
    nvalue = 0
    if roles.has_u:
        nvalue |= ROLE_BIT_U
    if roles.has_a:
        nvalue |= ROLE_BIT_A
    if roles.has_c:
        nvalue |= ROLE_BIT_C
    if roles.has_l:
        nvalue |= ROLE_BIT_L
    if roles.has_m:
        nvalue |= ROLE_BIT_M
    if payload.locked:
        nvalue |= ROLE_BIT_LOCKED
    return nvalue


def decode_role_nvalue(nvalue: int) -> RolePayload:
    if nvalue < 0 or nvalue & ~ROLE_LAYOUT_MASK:
        raise MalformedPayload(f"role nValue {nvalue:#x} has bits outside the role layout")
    roles = RoleSet(
        has_u=bool(nvalue & ROLE_BIT_U),
        has_a=bool(nvalue & ROLE_BIT_A),
        has_c=bool(nvalue & ROLE_BIT_C),
        has_l=bool(nvalue & ROLE_BIT_L),
        has_m=bool(nvalue & ROLE_BIT_M),
    )
    return RolePayload(roles=roles, locked=bool(nvalue & ROLE_BIT_LOCKED))


def encode_policy_nvalue(payload: PolicyPayload) -> int:
    if not 0 <= payload.param_id <= 0xFF:
        raise ValueError(f"policy parameter id {payload.param_id} does not fit in 8 bits")
    if not 0 <= payload.value <= UINT32_MAX:
        raise ValueError(f"policy value {payload.value} does not fit in 32 bits")
    nvalue = payload.param_id | (payload.value << POLICY_VALUE_SHIFT)
    if payload.permanent:
        nvalue |= POLICY_PERMANENT_BIT
    return nvalue


def decode_policy_nvalue(nvalue: int) -> PolicyPayload:
    if nvalue < 0 or nvalue & ~POLICY_LAYOUT_MASK:
        raise MalformedPayload(f"policy nValue {nvalue:#x} has bits outside the policy layout")
    return PolicyPayload(
        param_id=nvalue & 0xFF,
        permanent=bool(nvalue & POLICY_PERMANENT_BIT),
        value=(nvalue >> POLICY_VALUE_SHIFT) & UINT32_MAX,
    )


# CompactSize varints

def compact_size_encode(n: int) -> bytes:
    # See: https://en.bitcoin.it/wiki/Protocol_documentation#Variable_length_integer
    if n < 0 or n > UINT64_MAX:
        raise ValueError(f"compact size out of range: {n}")
    if n <= 0xFC:
        return bytes([n])
    if n <= 0xFFFF:
        return b"\xfd" + n.to_bytes(2, "little")
    if n <= 0xFFFFFFFF:
        return b"\xfe" + n.to_bytes(4, "little")
    return b"\xff" + n.to_bytes(8, "little")


def read_exact(reader: BinaryIO, size: int) -> bytes:
    data = reader.read(size)
    if len(data) != size:
        raise TruncatedInput(f"expected {size} bytes, found {len(data)}")
    return data


def compact_size_decode_reader(reader: BinaryIO) -> int:
    head = read_exact(reader, 1)[0]
    if head <= 0xFC:
        return head
    width = {0xFD: 2, 0xFE: 4, 0xFF: 8}[head]
    n = int.from_bytes(read_exact(reader, width), "little")
    if compact_size_encode(n)[0] != head:
        raise MalformedTransaction(f"non-canonical compact size {n}")
    return n


def _remaining(reader: BinaryIO) -> int:
    position = reader.tell()
    end = reader.seek(0, io.SEEK_END)
    reader.seek(position)
    return end - position


def read_count(reader: BinaryIO, item_size: int) -> int:
    count = compact_size_decode_reader(reader)
    if count * item_size > _remaining(reader):
        raise CountOverflow(f"count {count} exceeds the remaining input")
    return count


# Serialization

def _write_tx(tx: Transaction, out: BinaryIO, zero_signatures: bool = False) -> None:
    out.write(tx.version.to_bytes(4, "little"))
    out.write(compact_size_encode(len(tx.inputs)))
    for txin in tx.inputs:
        out.write(txin.prevout.txid)
        out.write(txin.prevout.index.to_bytes(4, "little"))
        out.write(b"\x01" if txin.law_override else b"\x00")
        out.write(txin.signer.pubkey)
        out.write(EMPTY_SIGNATURE if zero_signatures else txin.signature)
    out.write(compact_size_encode(len(tx.outputs)))
    for txout in tx.outputs:
        out.write(txout.nvalue.to_bytes(8, "little"))
        out.write(txout.recipient.pubkey)
    out.write(tx.locktime.to_bytes(4, "little"))


def serialize_tx(tx: Transaction) -> bytes:
    if not tx.outputs:
        raise MalformedTransaction("transaction has no outputs")
    buffer = io.BytesIO()
    _write_tx(tx, buffer)
    return buffer.getvalue()


def deserialize_tx_from(reader: BinaryIO) -> Transaction:
    version = int.from_bytes(read_exact(reader, 4), "little")
    if version not in VALID_VERSIONS:
        raise UnsupportedVersion(f"transaction version {version} is not 2, 3 or 4")
    inputs: List[TxInput] = []
    for _ in range(read_count(reader, INPUT_SIZE)):
        txid = read_exact(reader, 32)
        index = int.from_bytes(read_exact(reader, 4), "little")
        flag = read_exact(reader, 1)[0]
        if flag > 1:
            raise MalformedTransaction(f"law override flag must be 0 or 1, got {flag}")
        signer = AccountKey(read_exact(reader, PUBKEY_SIZE))
        signature = read_exact(reader, SIGNATURE_SIZE)
        inputs.append(TxInput(OutPoint(txid, index), signature, signer, bool(flag)))
    outputs: List[TxOutput] = []
    for _ in range(read_count(reader, OUTPUT_SIZE)):
        nvalue = int.from_bytes(read_exact(reader, 8), "little")
        outputs.append(TxOutput(nvalue, AccountKey(read_exact(reader, PUBKEY_SIZE))))
    if not outputs:
        raise MalformedTransaction("transaction has no outputs")
    locktime = int.from_bytes(read_exact(reader, 4), "little")
    return Transaction(version, tuple(inputs), tuple(outputs), locktime)


def deserialize_tx(data: bytes) -> Transaction:
    reader = io.BytesIO(data)
    tx = deserialize_tx_from(reader)
    if reader.read(1):
        raise MalformedTransaction("trailing bytes after transaction")
    return tx


@functools.lru_cache(maxsize=1 << 16)
def tx_digest(tx: Transaction) -> bytes:
    """Double SHA-256 over the serialization with every signature zeroed"""
    buffer = io.BytesIO()
    _write_tx(tx, buffer, zero_signatures=True)
    return double_sha256(buffer.getvalue())


def tx_id(tx: Transaction) -> bytes:
    return tx_digest(tx)


# Keys and signatures

@dataclass(frozen=True)
class KeyPair:
    secret: Ed25519PrivateKey
    account: AccountKey

    @classmethod
    def from_secret_bytes(cls, secret: bytes, display_name: Optional[str] = None) -> "KeyPair":
        private_key = Ed25519PrivateKey.from_private_bytes(secret)
        pubkey = private_key.public_key().public_bytes(
            encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw
        )
        return cls(private_key, AccountKey(pubkey, display_name))

    @classmethod
    def from_label(cls, label: str, display_name: Optional[str] = None) -> "KeyPair":
        secret = hashlib.sha256(b"rolechain-key:" + label.encode("utf-8")).digest()
        return cls.from_secret_bytes(secret, display_name or label)


def sign_input(tx: Transaction, input_index: int, keypair: KeyPair) -> TxInput:
    txin = tx.inputs[input_index]
    if txin.signer != keypair.account:
        raise ValueError(f"input {input_index} names signer {txin.signer.label}, not {keypair.account.label}")
    return replace(txin, signature=keypair.secret.sign(tx_digest(tx)))


def verify_input(tx: Transaction, input_index: int) -> bool:
    txin = tx.inputs[input_index]
    try:
        Ed25519PublicKey.from_public_bytes(txin.signer.pubkey).verify(txin.signature, tx_digest(tx))
        return True
    except (InvalidSignature, ValueError):
        return False


def sign_transaction(tx: Transaction, keypairs: Iterable[KeyPair]) -> Transaction:
    """Sign every non-null input whose signer has a key in `keypairs`"""
    by_account = {keypair.account: keypair for keypair in keypairs}
    signed = []
    for index, txin in enumerate(tx.inputs):
        keypair = by_account.get(txin.signer)
        if keypair is None or txin.prevout.is_null:
            signed.append(txin)
        else:
            signed.append(sign_input(tx, index, keypair))
    return replace(tx, inputs=tuple(signed))


# Builders

def make_input(prevout: OutPoint, signer: AccountKey, law_override: bool = False) -> TxInput:
    return TxInput(prevout=prevout, signature=EMPTY_SIGNATURE, signer=signer, law_override=law_override)


def build_coinbase(reward_key: AccountKey, amount: int, height: int) -> Transaction:
    return Transaction(
        version=TxMode.COIN_TRANSFER,
        inputs=(TxInput(NULL_OUTPOINT, EMPTY_SIGNATURE, NULL_KEY),),
        outputs=(TxOutput(amount, reward_key),),
        locktime=height,
    )


def build_transfer(inputs: Sequence[TxInput], payments: Sequence[Tuple[AccountKey, int]]) -> Transaction:
    return Transaction(
        version=TxMode.COIN_TRANSFER,
        inputs=tuple(inputs),
        outputs=tuple(TxOutput(amount, recipient) for recipient, amount in payments),
    )


def build_role_change(
    issuer: AccountKey,
    role_inputs: Sequence[OutPoint],
    assignments: Sequence[Tuple[AccountKey, RolePayload]],
    coin_inputs: Sequence[OutPoint] = (),
    change: int = 0,
) -> Transaction:
    """Output 0 is the issuer's coin change; every later output states one account's full role set"""
    inputs = [make_input(outpoint, issuer) for outpoint in list(role_inputs) + list(coin_inputs)]
    outputs = [TxOutput(change, issuer)]
    outputs.extend(TxOutput(encode_role_nvalue(payload), key) for key, payload in assignments)
    return Transaction(TxMode.ROLE_CHANGE, tuple(inputs), tuple(outputs))


def build_policy_change(
    issuer: AccountKey,
    role_input: OutPoint,
    issuer_roles: RolePayload,
    payloads: Sequence[PolicyPayload],
    coin_inputs: Sequence[OutPoint] = (),
    change: int = 0,
) -> Transaction:
    """Output 0 is coin change, output 1 re-creates the issuer's roles, outputs 2.. carry policy"""
    inputs = [make_input(outpoint, issuer) for outpoint in [role_input, *coin_inputs]]
    outputs = [TxOutput(change, issuer), TxOutput(encode_role_nvalue(issuer_roles), issuer)]
    outputs.extend(TxOutput(encode_policy_nvalue(payload), issuer) for payload in payloads)
    return Transaction(TxMode.POLICY_CHANGE, tuple(inputs), tuple(outputs))
