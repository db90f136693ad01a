"""
Ledger Service for Rolechain
UTXO set, role index, lock state and coinbase-origin tagging; applies already
validated transactions to produce the next ledger state
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from hierarchy_service import depth, on_role_transition
from models import (
    NULL_TXID, AccountKey, Coin, HierarchyTree, LedgerState, OutPoint, PolicyPayload, PolicyRecord, RoleIndexEntry,
    RolePayload, RoleRecord, RoleSet, Transaction, TxMode, UtxoEntry,
)
from policy_service import apply_policy_tx, initial_policy
from transaction_service import decode_policy_nvalue, decode_role_nvalue, tx_id

logger = logging.getLogger(__name__)

EMPTY_ROLES = RolePayload(RoleSet(), False)


@dataclass(frozen=True)
class RoleTransition:
    issuer: AccountKey
    target: AccountKey
    old: RolePayload
    new: RolePayload
    outpoint: OutPoint


def empty_ledger(y_min: int = 16, bootstrap_window: int = 20) -> LedgerState:
    return LedgerState(
        utxos={},
        role_index={},
        hierarchy=HierarchyTree(),
        policy=initial_policy(y_min, bootstrap_window),
        height=0,
        spent={},
        windows=(),
        block_hash=NULL_TXID,
    )


def kind_name(entry: UtxoEntry) -> str:
    if isinstance(entry.kind, Coin):
        return "coin"
    if isinstance(entry.kind, RoleRecord):
        return "role"
    return "policy"


# Queries

def role_of(state: LedgerState, key: AccountKey) -> RolePayload:
    entry = state.role_index.get(key)
    if entry is None:
        return EMPTY_ROLES
    return RolePayload(entry.roles, entry.locked)


def coins_of(state: LedgerState, key: AccountKey) -> List[UtxoEntry]:
    return sorted(
        (entry for entry in state.utxos.values() if entry.owner == key and entry.is_coin),
        key=lambda entry: entry.outpoint,
    )


def balance(state: LedgerState, key: AccountKey) -> int:
    return sum(entry.kind.amount for entry in coins_of(state, key))


def total_coin(state: LedgerState) -> int:
    return sum(entry.kind.amount for entry in state.utxos.values() if entry.is_coin)


def fold_role_index(state: LedgerState) -> Dict[AccountKey, RoleIndexEntry]:
    """Role index recomputed from the UTXO set alone"""
    folded: Dict[AccountKey, RoleIndexEntry] = {}
    for entry in state.utxos.values():
        if isinstance(entry.kind, RoleRecord):
            if entry.owner in folded:
                raise AssertionError(f"{entry.owner.label} has more than one live role output")
            payload = entry.kind.payload
            folded[entry.owner] = RoleIndexEntry(payload.roles, payload.locked, entry.outpoint)
    return folded


def issuer_of(tx: Transaction) -> AccountKey:
    """Signer of a management transaction; for genesis, the account receiving the roles"""
    if tx.is_genesis:
        return tx.outputs[1].recipient
    return tx.inputs[0].signer


def role_assignments(tx: Transaction) -> List[Tuple[int, AccountKey, RolePayload]]:
    """(output index, account, payload) for every role-bearing output of a management transaction"""
    if tx.mode == TxMode.ROLE_CHANGE:
        indexes = range(1, len(tx.outputs))
    elif tx.mode == TxMode.POLICY_CHANGE:
        indexes = range(1, min(2, len(tx.outputs)))
    else:
        return []
    return [(i, tx.outputs[i].recipient, decode_role_nvalue(tx.outputs[i].nvalue)) for i in indexes]


def policy_payloads(tx: Transaction) -> List[PolicyPayload]:
    if tx.mode != TxMode.POLICY_CHANGE:
        return []
    return [decode_policy_nvalue(output.nvalue) for output in tx.outputs[2:]]


def role_transitions(tx: Transaction, state: LedgerState) -> List[RoleTransition]:
    txid = tx_id(tx)
    issuer = issuer_of(tx)
    return [
        RoleTransition(issuer, key, role_of(state, key), payload, OutPoint(txid, index))
        for index, key, payload in role_assignments(tx)
    ]


# Application

def apply_transaction(tx: Transaction, state: LedgerState) -> LedgerState:
    """Pure state transition; `tx` must already have passed validation against `state`"""
    txid = tx_id(tx)
    utxos = dict(state.utxos)
    spent = dict(state.spent)
    for txin in tx.inputs:
        if txin.prevout.is_null:
            continue
        entry = utxos.pop(txin.prevout)
        spent[txin.prevout] = kind_name(entry)

    role_index = state.role_index
    hierarchy = state.hierarchy
    policy = state.policy

    if tx.mode == TxMode.COIN_TRANSFER:
        for index, output in enumerate(tx.outputs):
            outpoint = OutPoint(txid, index)
            utxos[outpoint] = UtxoEntry(outpoint, output.recipient, Coin(output.nvalue, tx.is_coinbase))
    else:
        change = OutPoint(txid, 0)
        utxos[change] = UtxoEntry(change, tx.outputs[0].recipient, Coin(tx.outputs[0].nvalue, False))
        role_index = dict(state.role_index)
        for transition in role_transitions(tx, state):
            new = transition.new
            utxos[transition.outpoint] = UtxoEntry(transition.outpoint, transition.target, RoleRecord(new))
            role_index[transition.target] = RoleIndexEntry(new.roles, new.locked, transition.outpoint)
            hierarchy = on_role_transition(
                transition.issuer, transition.target, transition.old.roles, new.roles, hierarchy
            )
        if tx.mode == TxMode.POLICY_CHANGE:
            issuer = issuer_of(tx)
            payloads = policy_payloads(tx)
            for offset, payload in enumerate(payloads, start=2):
                outpoint = OutPoint(txid, offset)
                utxos[outpoint] = UtxoEntry(outpoint, issuer, PolicyRecord(payload))
            policy = apply_policy_tx(payloads, depth(issuer, hierarchy), policy, state.height)

    return state.evolve(
        utxos=utxos,
        role_index=role_index,
        hierarchy=hierarchy,
        policy=policy,
        spent=spent,
    )


def live_role_outpoint(state: LedgerState, key: AccountKey) -> Optional[OutPoint]:
    entry = state.role_index.get(key)
    return entry.live_outpoint if entry is not None else None
