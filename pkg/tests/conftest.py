import itertools
from typing import Dict, Iterable, List, Optional

import pytest

from consensus_service import make_genesis
from ledger_service import apply_transaction, coins_of, role_of
from models import AccountKey, ChainConfig, LedgerState, OutPoint, PolicyPayload, RolePayload, RoleSet, Transaction
from policy_service import param_by_name
from transaction_service import (
    KeyPair, build_coinbase, build_policy_change, build_role_change, build_transfer, make_input, sign_transaction,
    tx_id,
)
from validation_service import ValidationService

ROOT = "node0"

FULL_POLICY = {"MINING_MODE": 0, "MGMT_TX_COUNT_X": 0, "MGMT_INTERVAL_Y": 144, "MAX_MINT_PER_TX": 1_000_000}


class LedgerBuilder:
    """Drives a LedgerState through validated transactions without blocks"""

    def __init__(self, root: str = ROOT, config: Optional[ChainConfig] = None):
        self.keys: Dict[str, KeyPair] = {}
        self.config = config or ChainConfig(root_key=self.key(root))
        _, genesis_state = make_genesis(self.key(root), self.config)
        self.state: LedgerState = genesis_state.evolve(height=1)
        self._coinbase_heights = itertools.count(1)

    def keypair(self, name: str) -> KeyPair:
        if name not in self.keys:
            self.keys[name] = KeyPair.from_label(name)
        return self.keys[name]

    def key(self, name: str) -> AccountKey:
        return self.keypair(name).account

    def name_of(self, key: AccountKey) -> str:
        return next(name for name, keypair in self.keys.items() if keypair.account == key)

    def sign(self, tx: Transaction, *names: str) -> Transaction:
        return sign_transaction(tx, [self.keypair(name) for name in names])

    def check(self, tx: Transaction):
        return ValidationService.check_transaction(tx, self.state)

    def submit(self, tx: Transaction) -> bytes:
        """Validate and apply; raises the ValidationError on rejection"""
        ValidationService.validate_transaction(tx, self.state)
        self.state = apply_transaction(tx, self.state)
        return tx_id(tx)

    # Coins

    def fund(self, name: str, amount: int) -> OutPoint:
        """Credit a coinbase-origin coin"""
        tx = build_coinbase(self.key(name), amount, next(self._coinbase_heights))
        self.state = apply_transaction(tx, self.state)
        return OutPoint(tx_id(tx), 0)

    def coins(self, name: str) -> List[OutPoint]:
        return [entry.outpoint for entry in coins_of(self.state, self.key(name))]

    def pay_tx(self, sender: str, outpoints: Iterable[OutPoint], payments, signer: Optional[str] = None,
               law_override: bool = False) -> Transaction:
        signer = signer or sender
        inputs = [make_input(outpoint, self.key(signer), law_override) for outpoint in outpoints]
        tx = build_transfer(inputs, [(self.key(name), amount) for name, amount in payments])
        return self.sign(tx, signer)

    # Roles

    def role_tx(self, issuer: str, target: str, payload: RolePayload) -> Transaction:
        issuer_key, target_key = self.key(issuer), self.key(target)
        role_inputs = [self.state.role_index[issuer_key].live_outpoint]
        if target_key == issuer_key:
            assignments = [(issuer_key, payload)]
        else:
            target_entry = self.state.role_index.get(target_key)
            if target_entry is not None:
                role_inputs.append(target_entry.live_outpoint)
            assignments = [(issuer_key, role_of(self.state, issuer_key)), (target_key, payload)]
        return self.sign(build_role_change(issuer_key, role_inputs, assignments), issuer)

    def grant_tx(self, issuer: str, target: str, letters: str) -> Transaction:
        old = role_of(self.state, self.key(target))
        return self.role_tx(issuer, target, RolePayload(RoleSet.from_letters(old.roles.letters() + letters), old.locked))

    def remove_tx(self, issuer: str, target: str) -> Transaction:
        return self.role_tx(issuer, target, RolePayload(RoleSet(), role_of(self.state, self.key(target)).locked))

    def lock_tx(self, issuer: str, target: str, locked: bool = True) -> Transaction:
        return self.role_tx(issuer, target, RolePayload(role_of(self.state, self.key(target)).roles, locked))

    def grant(self, issuer: str, target: str, letters: str) -> bytes:
        return self.submit(self.grant_tx(issuer, target, letters))

    def policy_tx(self, issuer: str, permanent: Iterable[str] = (), **values: int) -> Transaction:
        issuer_key = self.key(issuer)
        payloads = [
            PolicyPayload(int(param_by_name(name)), name in set(permanent), value) for name, value in values.items()
        ]
        tx = build_policy_change(
            issuer_key, self.state.role_index[issuer_key].live_outpoint, role_of(self.state, issuer_key), payloads
        )
        return self.sign(tx, issuer)

    def roles(self, name: str) -> RolePayload:
        return role_of(self.state, self.key(name))


def build_reference_hierarchy(builder: LedgerBuilder) -> LedgerBuilder:
    """
    Twelve accounts: node0 root, node1 M, node2 L under node1, node3 C under
    node0, node4 and node5 A under node1, node6..node10 U under the account
    managers, node6 locked, node9 self-removed, node11 never registered.
    """
    builder.grant("node0", "node1", "M")
    builder.grant("node0", "node3", "C")
    builder.grant("node1", "node2", "L")
    builder.grant("node1", "node4", "A")
    builder.grant("node1", "node5", "A")
    for target in ("node6", "node7"):
        builder.grant("node4", target, "U")
    for target in ("node8", "node9", "node10"):
        builder.grant("node5", target, "U")
    builder.submit(builder.lock_tx("node2", "node6"))
    builder.submit(builder.remove_tx("node9", "node9"))
    builder.key("node11")
    return builder


@pytest.fixture
def ledger() -> LedgerBuilder:
    return LedgerBuilder()


@pytest.fixture
def hierarchy_ledger() -> LedgerBuilder:
    return build_reference_hierarchy(LedgerBuilder())


@pytest.fixture
def root_key() -> KeyPair:
    return KeyPair.from_label(ROOT)


@pytest.fixture
def chain_config(root_key) -> ChainConfig:
    return ChainConfig(root_key=root_key.account, subsidy=5_000, y_min=4, bootstrap_window=20)
