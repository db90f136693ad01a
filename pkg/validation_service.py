"""
Validation Service for Rolechain
Consensus rules for coin transfers, minting, role changes, policy changes and
law-enforcement overrides
"""
import logging
from typing import List, Optional, Set, Tuple

from errors import (
    AccountLocked, AuthorityExceeded, BadCoinbase, BadSignature, CycleCreated, DoubleSpend,
    HierarchyError, IssuerLocked, MalformedTransaction, MintCapExceeded, MissingCRole, MissingLRole,
    MissingMRole, MissingURole, Overspend, ReplayedRole, RolechainError, ScopeViolation,
    SignerMismatch, UnknownUtxo,
)
from hierarchy_service import depth, is_ancestor_or_self, law_scope, manager_scope
from ledger_service import RoleTransition, policy_payloads, role_of, role_transitions
from models import (
    AccountKey, LedgerState, PolicyParamId, PolicyPayload, RoleIndexEntry, RolePayload, Transaction,
    TxMode, UtxoEntry,
)
from policy_service import check_policy_tx, effective
from transaction_service import decode_role_nvalue, verify_input

logger = logging.getLogger(__name__)


class ValidationService:
    """Stateless rule checks; every method is a pure read of the ledger state"""

    # Shared input handling

    @staticmethod
    def resolve_inputs(tx: Transaction, state: LedgerState) -> List[UtxoEntry]:
        entries = []
        seen = set()
        for txin in tx.inputs:
            outpoint = txin.prevout
            if outpoint.is_null:
                raise MalformedTransaction("null input outside a coinbase")
            if outpoint in seen:
                raise DoubleSpend(f"{outpoint} is spent twice in one transaction")
            seen.add(outpoint)
            entry = state.utxos.get(outpoint)
            if entry is None:
                spent_kind = state.spent.get(outpoint)
                if spent_kind == "role":
                    raise ReplayedRole(f"role output {outpoint} was already spent")
                if spent_kind is not None:
                    raise DoubleSpend(f"{outpoint} was already spent")
                raise UnknownUtxo(f"{outpoint} does not exist")
            entries.append(entry)
        return entries

    @staticmethod
    def check_signatures(tx: Transaction) -> None:
        for index in range(len(tx.inputs)):
            if not verify_input(tx, index):
                raise BadSignature(f"input {index} signature does not verify under {tx.inputs[index].signer.label}")

    @staticmethod
    def holds(state: LedgerState, key: AccountKey, letter: str) -> bool:
        entry = state.role_index.get(key)
        return entry is not None and not entry.locked and letter in entry.roles.as_set()

    # Coin transfer mode

    @staticmethod
    def validate_transfer(tx: Transaction, state: LedgerState) -> int:
        """
        Validate a non-coinbase coin transfer.

        Returns:
            fee paid (inputs minus outputs); zero for a mint
        """
        if tx.mode != TxMode.COIN_TRANSFER:
            raise MalformedTransaction(f"expected a coin transfer, got {tx.mode.name}")
        if tx.is_coinbase:
            raise BadCoinbase("coinbase transaction outside the first block slot")
        if not tx.inputs:
            raise MalformedTransaction("transfer without inputs")
        entries = ValidationService.resolve_inputs(tx, state)
        ValidationService.check_signatures(tx)
        for entry in entries:
            if not entry.is_coin:
                raise MalformedTransaction(f"transfer input {entry.outpoint} is not a coin output")

        input_sum = sum(entry.kind.amount for entry in entries)
        output_sum = sum(output.nvalue for output in tx.outputs)
        minting = output_sum > input_sum

        for txin, entry in zip(tx.inputs, entries):
            if txin.law_override:
                continue
            if txin.signer != entry.owner:
                raise SignerMismatch(f"{entry.outpoint} belongs to {entry.owner.label}, signed by {txin.signer.label}")
            signer_entry = state.role_index.get(txin.signer)
            if signer_entry is not None and signer_entry.locked:
                raise AccountLocked(f"{txin.signer.label} is locked")
            if entry.kind.coinbase_origin:
                continue
            if minting and ValidationService.holds(state, txin.signer, "C"):
                continue
            if signer_entry is None or not signer_entry.roles.has_u:
                raise MissingURole(f"{txin.signer.label} needs the U role to spend {entry.outpoint}")

        if any(txin.law_override for txin in tx.inputs):
            ValidationService._check_law_overrides(tx, entries, state)
        if minting:
            ValidationService.validate_mint(tx, state)
            return 0
        return input_sum - output_sum

    @staticmethod
    def validate_mint(tx: Transaction, state: LedgerState) -> int:
        entries = ValidationService.resolve_inputs(tx, state)
        input_sum = sum(entry.kind.amount for entry in entries if entry.is_coin)
        minted = sum(output.nvalue for output in tx.outputs) - input_sum
        if minted <= 0:
            return 0
        signers = {txin.signer for txin in tx.inputs if not txin.law_override}
        if not signers:
            raise Overspend(f"outputs exceed inputs by {minted} with no signer able to mint")
        if not any(ValidationService.holds(state, signer, "C") for signer in signers):
            raise MissingCRole(f"creating {minted} new coin requires an unlocked C holder")
        cap = effective(PolicyParamId.MAX_MINT_PER_TX, state.policy)
        if minted > cap:
            raise MintCapExceeded(f"minted {minted} exceeds MAX_MINT_PER_TX {cap}")
        return minted

    @staticmethod
    def _check_law_overrides(tx: Transaction, entries: List[UtxoEntry], state: LedgerState) -> None:
        for txin, entry in zip(tx.inputs, entries):
            if not txin.law_override:
                continue
            signer_entry = state.role_index.get(txin.signer)
            if signer_entry is None or not signer_entry.roles.has_l:
                raise MissingLRole(f"{txin.signer.label} cannot override without the L role")
            if signer_entry.locked:
                raise AccountLocked(f"{txin.signer.label} is locked")
            try:
                scope = law_scope(txin.signer, state.hierarchy, state.role_index)
            except HierarchyError as e:
                raise ScopeViolation(str(e)) from e
            if entry.owner not in scope:
                raise ScopeViolation(f"{entry.owner.label} is outside the scope of {txin.signer.label}")

    @staticmethod
    def law_move_funds(tx: Transaction, state: LedgerState) -> int:
        if not any(txin.law_override for txin in tx.inputs):
            raise MalformedTransaction("no law override inputs")
        return ValidationService.validate_transfer(tx, state)

    # Management transactions (role and policy change modes)

    @staticmethod
    def _management_inputs(tx: Transaction, state: LedgerState) -> Tuple[AccountKey, RoleIndexEntry, List[UtxoEntry]]:
        if tx.has_null_input:
            raise MalformedTransaction("genesis-shaped transaction outside the genesis block")
        if not tx.inputs:
            raise MalformedTransaction("management transaction without inputs")
        entries = ValidationService.resolve_inputs(tx, state)
        ValidationService.check_signatures(tx)
        issuer = tx.inputs[0].signer
        for txin in tx.inputs:
            if txin.law_override:
                raise MalformedTransaction("law override is only valid in coin transfers")
            if txin.signer != issuer:
                raise SignerMismatch("every input of a management transaction is signed by the issuer")
        issuer_entry = state.role_index.get(issuer)
        if issuer_entry is None or issuer_entry.live_outpoint != tx.inputs[0].prevout:
            raise MalformedTransaction(f"first input must spend the live role output of {issuer.label}")
        for entry in entries[1:]:
            if entry.is_coin and entry.owner != issuer:
                raise SignerMismatch(f"{entry.outpoint} belongs to {entry.owner.label}")
            if not entry.is_coin and not entry.is_role:
                raise MalformedTransaction(f"{entry.outpoint} is a policy record and cannot be spent")
        if tx.outputs[0].recipient != issuer:
            raise MalformedTransaction("output 0 must return change to the issuer")
        return issuer, issuer_entry, entries

    @staticmethod
    def management_fee(tx: Transaction, entries: List[UtxoEntry]) -> int:
        brought = sum(entry.kind.amount for entry in entries if entry.is_coin)
        fee = brought - tx.outputs[0].nvalue
        if fee < 0:
            raise Overspend(f"change {tx.outputs[0].nvalue} exceeds the {brought} coin brought in")
        return fee

    @staticmethod
    def _authorize(
        issuer: AccountKey,
        issuer_entry: RoleIndexEntry,
        target: AccountKey,
        old: RolePayload,
        new: RolePayload,
        state: LedgerState,
    ) -> None:
        roles_changed = old.roles != new.roles
        lock_changed = old.locked != new.locked
        if not roles_changed and not lock_changed:
            raise MalformedTransaction(f"role output for {target.label} changes nothing")

        if lock_changed:
            if not issuer_entry.roles.has_l:
                raise AuthorityExceeded("only law enforcement may change the lock flag")
            try:
                scope = law_scope(issuer, state.hierarchy, state.role_index)
            except HierarchyError as e:
                raise ScopeViolation(str(e)) from e
            if target not in scope:
                raise ScopeViolation(f"{target.label} is outside the law scope of {issuer.label}")

        if not roles_changed:
            return
        roleless = old.roles.is_empty
        if target == issuer and new.roles.is_empty:
            return
        if issuer_entry.roles.has_m:
            if not roleless and target not in manager_scope(issuer, state.hierarchy, state.role_index):
                raise ScopeViolation(f"{target.label} is outside the manager scope of {issuer.label}")
        elif issuer_entry.roles.has_a:
            changed = old.roles.as_set() ^ new.roles.as_set()
            if changed - {"U"}:
                raise AuthorityExceeded(f"an account manager may grant or remove only U, not {''.join(sorted(changed))}")
            if not roleless and (
                target == issuer or target not in manager_scope(issuer, state.hierarchy, state.role_index)
            ):
                raise ScopeViolation(f"{target.label} is not a descendant of {issuer.label}")
        else:
            raise AuthorityExceeded(f"{issuer.label} holds no role that may change {target.label}'s roles")

    @staticmethod
    def validate_role_change(tx: Transaction, state: LedgerState) -> List[RoleTransition]:
        """
        Validate a role change: the issuer spends and re-creates its own role output,
        and every target's previous role output is replaced by one stating its full new role set.

        Returns:
            one RoleTransition per role output, the issuer's re-creation included
        """
        if tx.mode != TxMode.ROLE_CHANGE:
            raise MalformedTransaction(f"expected a role change, got {tx.mode.name}")
        if len(tx.outputs) < 2:
            raise MalformedTransaction("role change carries no role outputs")
        issuer, issuer_entry, entries = ValidationService._management_inputs(tx, state)
        if issuer_entry.locked:
            raise IssuerLocked(f"{issuer.label} is locked")
        ValidationService.management_fee(tx, entries)

        for output in tx.outputs[1:]:
            decode_role_nvalue(output.nvalue)
        transitions = role_transitions(tx, state)
        targets = [transition.target for transition in transitions]
        if len(set(targets)) != len(targets):
            raise MalformedTransaction("more than one role output for the same account")
        if issuer not in targets:
            raise MalformedTransaction(f"the roles of {issuer.label} are not re-created")

        spent_role_owners: Set[AccountKey] = {entry.owner for entry in entries if entry.is_role}
        for target in targets:
            live = state.role_index.get(target)
            if live is not None and target not in spent_role_owners:
                raise MalformedTransaction(f"live role output of {target.label} is not spent")
        for owner in spent_role_owners:
            if owner not in targets:
                raise MalformedTransaction(f"role output of {owner.label} is spent but not replaced")

        for transition in transitions:
            if transition.target == issuer and transition.new == transition.old:
                continue
            ValidationService._authorize(issuer, issuer_entry, transition.target, transition.old, transition.new, state)
            if transition.old.roles.is_empty and not transition.new.roles.is_empty:
                if is_ancestor_or_self(transition.target, issuer, state.hierarchy):
                    raise CycleCreated(f"{transition.target.label} is an ancestor of {issuer.label}")
        return transitions

    @staticmethod
    def validate_policy_change(tx: Transaction, state: LedgerState) -> List[PolicyPayload]:
        if tx.mode != TxMode.POLICY_CHANGE:
            raise MalformedTransaction(f"expected a policy change, got {tx.mode.name}")
        if len(tx.outputs) < 3:
            raise MalformedTransaction("policy change needs change, role and at least one policy output")
        issuer, issuer_entry, entries = ValidationService._management_inputs(tx, state)
        if issuer_entry.locked:
            raise IssuerLocked(f"{issuer.label} is locked")
        if not issuer_entry.roles.has_m:
            raise MissingMRole(f"{issuer.label} does not hold the M role")
        for entry in entries[1:]:
            if entry.is_role:
                raise MalformedTransaction("a policy change spends only the issuer's role output")
        ValidationService.management_fee(tx, entries)

        recreated = tx.outputs[1]
        if recreated.recipient != issuer or decode_role_nvalue(recreated.nvalue) != role_of(state, issuer):
            raise MalformedTransaction("output 1 must re-create the issuer's roles unchanged")
        if any(output.recipient != issuer for output in tx.outputs[2:]):
            raise MalformedTransaction("policy outputs are recorded against the issuer")
        payloads = policy_payloads(tx)
        check_policy_tx(payloads, depth(issuer, state.hierarchy), state.policy)
        return payloads

    # Dispatch

    @staticmethod
    def validate_transaction(tx: Transaction, state: LedgerState) -> int:
        """Validate any non-coinbase transaction and return the fee it pays"""
        if tx.mode == TxMode.COIN_TRANSFER:
            return ValidationService.validate_transfer(tx, state)
        if tx.mode == TxMode.ROLE_CHANGE:
            ValidationService.validate_role_change(tx, state)
        else:
            ValidationService.validate_policy_change(tx, state)
        return ValidationService.management_fee(tx, [state.utxos[txin.prevout] for txin in tx.inputs])

    @staticmethod
    def check_transaction(tx: Transaction, state: LedgerState) -> Tuple[bool, str]:
        """Validate without raising; returns (is_valid, message)"""
        try:
            fee = ValidationService.validate_transaction(tx, state)
        except RolechainError as e:
            logger.debug(f"Transaction rejected: {e.code}: {e}")
            return False, f"{e.code}: {e}"
        return True, f"fee={fee}"
