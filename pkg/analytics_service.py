"""
Chain Analytics Service for Rolechain
Reports over a block sequence and independent folds used to cross-check the
ledger: window sums, coin conservation and miner block shares
"""

import logging
from collections import Counter
from typing import Dict, List, Mapping, Optional, Sequence

from consensus_service import block_hash
from models import UINT32_MAX, AccountKey, Block, OutPoint, Transaction, TxMode
from transaction_service import tx_id

# Raw policy layout, decoded here without the policy service
_PARAM_MODE, _PARAM_X, _PARAM_Y = 0, 1, 2


def _is_mgmt(tx: Transaction) -> bool:
    null_input = len(tx.inputs) == 1 and tx.inputs[0].prevout.is_null
    return tx.version in (TxMode.ROLE_CHANGE, TxMode.POLICY_CHANGE) and not null_input


class ChainAnalyticsService:
    """Pure reads over an ordered list of blocks starting at genesis"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def window_report(self, blocks: Sequence[Block]) -> List[Dict]:
        """
        Replay management counts and window parameters block by block.

        Returns:
            one dict per completed window whose first block was mined under the
            dependent mode: index, start, end, found, required, ok
        """
        params = {_PARAM_MODE: 0, _PARAM_X: 0, _PARAM_Y: UINT32_MAX}
        entering: Dict[int, Dict[int, int]] = {}
        counts: Dict[int, int] = {}
        for block in blocks:
            if block.height == 0:
                continue
            entering[block.height] = dict(params)
            counts[block.height] = sum(1 for tx in block.transactions if _is_mgmt(tx))
            for tx in block.transactions:
                if tx.version == TxMode.POLICY_CHANGE:
                    for output in tx.outputs[2:]:
                        params[output.nvalue & 0xFF] = (output.nvalue >> 16) & UINT32_MAX

        report = []
        start: Optional[int] = None
        for height, at_start in sorted(entering.items()):
            y = at_start[_PARAM_Y]
            if start is None and at_start[_PARAM_MODE] == 1 and (height - 1) % y == 0:
                start = height
            if start is None:
                continue
            opened = entering[start]
            end = start + opened[_PARAM_Y] - 1
            if height != end:
                continue
            found = sum(counts[h] for h in range(start, end + 1))
            report.append({
                "index": end // opened[_PARAM_Y],
                "start": start,
                "end": end,
                "found": found,
                "required": opened[_PARAM_X],
                "ok": found >= opened[_PARAM_X],
            })
            start = None
        return report

    def mgmt_counts(self, blocks: Sequence[Block]) -> Dict[int, int]:
        return {block.height: sum(1 for tx in block.transactions if _is_mgmt(tx)) for block in blocks}

    def conservation(self, blocks: Sequence[Block]) -> Dict:
        """
        Fold coin amounts over the chain with a private outpoint map.

        Returns:
            dict with total (unspent coin), coinbase, minted, fees and balanced, where
            balanced means total == coinbase + minted - fees
        """
        amounts: Dict[OutPoint, int] = {}
        coinbase = minted = fees = 0
        for block in blocks:
            for tx in block.transactions:
                txid = tx_id(tx)
                null_input = len(tx.inputs) == 1 and tx.inputs[0].prevout.is_null
                spent = sum(amounts.pop(txin.prevout, 0) for txin in tx.inputs if not txin.prevout.is_null)
                if tx.version == TxMode.COIN_TRANSFER:
                    created = sum(output.nvalue for output in tx.outputs)
                    for index, output in enumerate(tx.outputs):
                        amounts[OutPoint(txid, index)] = output.nvalue
                    if null_input:
                        coinbase += created
                    elif created > spent:
                        minted += created - spent
                    else:
                        fees += spent - created
                else:
                    amounts[OutPoint(txid, 0)] = tx.outputs[0].nvalue
                    fees += spent - tx.outputs[0].nvalue
        total = sum(amounts.values())
        return {
            "total": total,
            "coinbase": coinbase,
            "minted": minted,
            "fees": fees,
            "balanced": total == coinbase + minted - fees,
        }

    def block_shares(self, blocks: Sequence[Block]) -> Counter:
        """Blocks won per coinbase recipient, genesis excluded"""
        shares: Counter = Counter()
        for block in blocks:
            if block.height == 0 or not block.transactions:
                continue
            shares[block.transactions[0].outputs[0].recipient] += 1
        return shares

    def share_of(self, blocks: Sequence[Block], miners: Sequence[AccountKey]) -> Optional[float]:
        shares = self.block_shares(blocks)
        total = sum(shares.values())
        if total == 0:
            return None
        won = sum(shares[key] for key in set(miners))
        self.logger.debug(f"Share of {len(set(miners))} miners: {won}/{total}")
        return won / total

    def duplicate_txids(self, blocks: Sequence[Block]) -> List[bytes]:
        seen = Counter(tx_id(tx) for block in blocks for tx in block.transactions)
        return sorted(txid for txid, count in seen.items() if count > 1)

    def block_summaries(self, blocks: Sequence[Block], names: Optional[Mapping[AccountKey, str]] = None) -> List[Dict]:
        names = names or {}
        summaries = []
        for block in blocks:
            modes = Counter(TxMode(tx.version).name for tx in block.transactions)
            reward: Optional[str] = None
            if block.height > 0 and block.transactions:
                recipient = block.transactions[0].outputs[0].recipient
                reward = names.get(recipient) or recipient.label
            summaries.append({
                "height": block.height,
                "hash": block_hash(block).hex(),
                "tx_count": len(block.transactions),
                "mgmt_count": sum(1 for tx in block.transactions if _is_mgmt(tx)),
                "modes": dict(sorted(modes.items())),
                "reward": reward,
            })
        return summaries
