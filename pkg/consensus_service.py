"""
Consensus Service for Rolechain
Block structure, proof of work, block validation with the dependent-mining
window rule, fork choice and chain files
"""

import io
import logging
import os
from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import (
    BadCoinbase, BadMerkle, BadPoW, BadPrevHash, BootstrapIncomplete, CoinbaseOverpay, OrphanParent, TruncatedInput,
    WindowViolation,
)
from ledger_service import apply_transaction, empty_ledger
from models import (
    EMPTY_SIGNATURE, MINING_DEPENDENT, NULL_KEY, NULL_OUTPOINT, NULL_TXID, UINT64_MAX, AccountKey, Block, BlockHeader,
    ChainConfig, LedgerState, PolicyParamId, RolePayload, RoleSet, Transaction, TxInput, TxMode, TxOutput, WindowSample,
)
from policy_service import bootstrap_check, effective
from transaction_service import (
    build_coinbase, compact_size_encode, deserialize_tx_from, double_sha256, encode_role_nvalue, read_exact,
    read_count, serialize_tx, tx_id,
)
from validation_service import ValidationService

logger = logging.getLogger(__name__)

MIN_TX_SIZE = 4 + 1 + 1 + 8 + 32 + 4


# Headers, hashes and merkle roots

def serialize_header(header: BlockHeader) -> bytes:
    return b"".join([
        header.prev_hash,
        header.merkle_root,
        header.height.to_bytes(4, "little"),
        header.nonce.to_bytes(8, "little"),
        header.target.to_bytes(32, "little"),
    ])


def block_hash(block_or_header) -> bytes:
    header = block_or_header.header if isinstance(block_or_header, Block) else block_or_header
    return double_sha256(serialize_header(header))


def meets_target(header: BlockHeader) -> bool:
    return int.from_bytes(block_hash(header), "little") <= header.target


def merkle_root(txids: Sequence[bytes]) -> bytes:
    """Bitcoin-style pairwise double SHA-256, duplicating the last hash of an odd level"""
    if not txids:
        return NULL_TXID
    level = list(txids)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [double_sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def serialize_block(block: Block) -> bytes:
    parts = [serialize_header(block.header), compact_size_encode(len(block.transactions))]
    parts.extend(serialize_tx(tx) for tx in block.transactions)
    return b"".join(parts)


def deserialize_block_from(reader: BinaryIO) -> Block:
    prev_hash = read_exact(reader, 32)
    merkle = read_exact(reader, 32)
    height = int.from_bytes(read_exact(reader, 4), "little")
    nonce = int.from_bytes(read_exact(reader, 8), "little")
    target = int.from_bytes(read_exact(reader, 32), "little")
    count = read_count(reader, MIN_TX_SIZE)
    transactions = tuple(deserialize_tx_from(reader) for _ in range(count))
    return Block(BlockHeader(prev_hash, merkle, height, nonce, target), transactions)


def deserialize_block(data: bytes) -> Block:
    return deserialize_block_from(io.BytesIO(data))


# Genesis

def genesis_transaction(root_key: AccountKey) -> Transaction:
    return Transaction(
        version=TxMode.ROLE_CHANGE,
        inputs=(TxInput(NULL_OUTPOINT),),
        outputs=(
            TxOutput(0, root_key),
            TxOutput(encode_role_nvalue(RolePayload(RoleSet.all_roles(), False)), root_key),
        ),
    )


def make_genesis(root_key: AccountKey, config: ChainConfig) -> Tuple[Block, LedgerState]:
    """Block 0 grants every role to the root; its proof of work is never checked"""
    tx = genesis_transaction(root_key)
    header = BlockHeader(NULL_TXID, merkle_root([tx_id(tx)]), 0, 0, config.target)
    block = Block(header, (tx,))
    state = apply_transaction(tx, empty_ledger(config.y_min, config.bootstrap_window))
    return block, state.evolve(height=0, block_hash=block_hash(block))


def root_of_genesis(block: Block) -> AccountKey:
    if block.height != 0 or len(block.transactions) != 1 or not block.transactions[0].is_genesis:
        raise BadCoinbase("first block is not a genesis block")
    return block.transactions[0].outputs[1].recipient


# Management windows

def count_mgmt_txs(block: Block) -> int:
    return sum(1 for tx in block.transactions if tx.is_management)


def window_sample(block: Block, parent_policy) -> WindowSample:
    return WindowSample(
        height=block.height,
        mgmt_count=count_mgmt_txs(block),
        mining_mode=effective(PolicyParamId.MINING_MODE, parent_policy),
        x=effective(PolicyParamId.MGMT_TX_COUNT_X, parent_policy),
        y=effective(PolicyParamId.MGMT_INTERVAL_Y, parent_policy),
    )


def completed_windows(samples: Sequence[WindowSample]) -> Iterator[Tuple[WindowSample, int, int]]:
    """
    Walk a contiguous sample log and yield (first sample, end height, found) per completed window.

    A window opens at a dependent-mode block whose height is 1 modulo the y in
    force there, unless an earlier window is still open. It closes y blocks
    later, with x and y fixed at its first block. A y change moves the grid
    only for windows that open after it.
    """
    first: Optional[WindowSample] = None
    found = 0
    for sample in samples:
        if first is None and sample.mining_mode == MINING_DEPENDENT and (sample.height - 1) % sample.y == 0:
            first, found = sample, 0
        if first is None:
            continue
        found += sample.mgmt_count
        if sample.height == first.height + first.y - 1:
            yield first, sample.height, found
            first = None


def dependent_window_check(samples: Sequence[WindowSample]) -> None:
    """
    Check the window completed by the last sample, if any.

    Raises:
        WindowViolation: the completed window holds fewer than x management transactions
    """
    if not samples:
        return
    last = samples[-1].height
    for first, end, found in completed_windows(samples):
        if end == last and found < first.x:
            raise WindowViolation(end // first.y, found, first.x)


# Block validation

def collect_fees(transactions: Iterable[Transaction], state: LedgerState) -> Tuple[int, LedgerState]:
    """Validate and apply non-coinbase transactions in order, returning total fees and the resulting state"""
    fees = 0
    for tx in transactions:
        fees += ValidationService.validate_transaction(tx, state)
        state = apply_transaction(tx, state)
    return fees, state


def _check_coinbase(block: Block) -> Transaction:
    if not block.transactions:
        raise BadCoinbase("block has no transactions")
    coinbase = block.transactions[0]
    if not coinbase.is_coinbase:
        raise BadCoinbase("first transaction is not a coinbase")
    if coinbase.locktime != block.height:
        raise BadCoinbase(f"coinbase locktime {coinbase.locktime} does not match height {block.height}")
    coinbase_input = coinbase.inputs[0]
    if coinbase_input.signature != EMPTY_SIGNATURE or coinbase_input.signer != NULL_KEY or coinbase_input.law_override:
        raise BadCoinbase("coinbase input must carry an empty signature and the null signer")
    if any(tx.is_coinbase or tx.is_genesis for tx in block.transactions[1:]):
        raise BadCoinbase("only the first transaction may have a null input")
    return coinbase


def validate_block(block: Block, parent: LedgerState, config: ChainConfig) -> LedgerState:
    """
    Validate `block` against its parent's ledger state.

    Returns:
        the child ledger state

    Raises:
        BadPrevHash, BadPoW, BadMerkle, BadCoinbase, CoinbaseOverpay, BootstrapIncomplete,
        WindowViolation, or any transaction-level ValidationError
    """
    header = block.header
    if header.prev_hash != parent.block_hash or header.height != parent.height + 1:
        raise BadPrevHash(f"block at height {header.height} does not extend {parent.block_hash.hex()[:16]}")
    if header.target != config.target or not meets_target(header):
        raise BadPoW(f"header hash {block_hash(header).hex()[:16]} does not meet the target")
    if header.merkle_root != merkle_root([tx_id(tx) for tx in block.transactions]):
        raise BadMerkle(f"merkle root mismatch at height {header.height}")
    coinbase = _check_coinbase(block)

    state = parent.evolve(height=header.height)
    fees, state = collect_fees(block.transactions[1:], state)
    paid = sum(output.nvalue for output in coinbase.outputs)
    if paid > config.subsidy + fees:
        raise CoinbaseOverpay(f"coinbase pays {paid}, allowed {config.subsidy + fees}")
    state = apply_transaction(coinbase, state)

    unset = bootstrap_check(parent.policy, header.height)
    if unset:
        names = ", ".join(param.name for param in unset)
        raise BootstrapIncomplete(f"unset at height {header.height}: {names}")

    windows = parent.windows + (window_sample(block, parent.policy),)
    dependent_window_check(windows)
    return state.evolve(windows=windows, block_hash=block_hash(block))


# Mining

def mine_block(
    template: Sequence[Transaction],
    parent: LedgerState,
    reward_key: AccountKey,
    config: ChainConfig,
    seed: int = 0,
    coinbase_amount: Optional[int] = None,
) -> Block:
    """
    Build a block on `parent` and search nonces until the header meets the target.

    The search starts at an offset drawn from `seed`, so different seeds give
    different blocks for the same template. `coinbase_amount` overrides the
    subsidy plus fees the coinbase would normally claim.
    """
    height = parent.height + 1
    if coinbase_amount is None:
        fees, _ = collect_fees(template, parent.evolve(height=height))
        coinbase_amount = config.subsidy + fees
    transactions = (build_coinbase(reward_key, coinbase_amount, height), *template)
    root = merkle_root([tx_id(tx) for tx in transactions])

    rng = np.random.default_rng(seed)
    nonce = int(rng.integers(0, 2**63))
    while True:
        header = BlockHeader(parent.block_hash, root, height, nonce, config.target)
        if meets_target(header):
            return Block(header, transactions)
        nonce = (nonce + 1) & UINT64_MAX


# Chain state

class ChainState:
    """Every validated block with its ledger snapshot; the tip is the highest, first seen on ties"""

    def __init__(self, config: ChainConfig, genesis: Optional[Block] = None):
        self.logger = logging.getLogger(__name__)
        self.config = config
        if genesis is None:
            genesis, genesis_state = make_genesis(config.root_key, config)
        else:
            expected, genesis_state = make_genesis(root_of_genesis(genesis), config)
            if expected != genesis:
                raise BadCoinbase("genesis block does not match the chain configuration")
        self.genesis_hash = block_hash(genesis)
        self.blocks: Dict[bytes, Block] = {self.genesis_hash: genesis}
        self.states: Dict[bytes, LedgerState] = {self.genesis_hash: genesis_state}
        self.tip = self.genesis_hash

    @property
    def tip_state(self) -> LedgerState:
        return self.states[self.tip]

    @property
    def height(self) -> int:
        return self.blocks[self.tip].height

    def has_block(self, hash_: bytes) -> bool:
        return hash_ in self.blocks

    def state_at(self, hash_: bytes) -> LedgerState:
        return self.states[hash_]

    def connect_block(self, block: Block) -> bool:
        """
        Validate and store `block`.

        Returns:
            True when the tip moved to a new block (extension or reorg)

        Raises:
            OrphanParent: the parent is unknown
            ValidationError: the block is invalid; nothing is stored
        """
        hash_ = block_hash(block)
        if hash_ in self.blocks:
            return False
        parent_state = self.states.get(block.header.prev_hash)
        if parent_state is None:
            raise OrphanParent(f"parent {block.header.prev_hash.hex()[:16]} is unknown")
        state = validate_block(block, parent_state, self.config)
        self.blocks[hash_] = block
        self.states[hash_] = state
        if block.height > self.height:
            if block.header.prev_hash != self.tip:
                self.logger.info(f"Reorg to {hash_.hex()[:16]} at height {block.height}")
            self.tip = hash_
            return True
        return False

    def best_chain(self) -> List[Block]:
        chain = []
        hash_ = self.tip
        while True:
            block = self.blocks[hash_]
            chain.append(block)
            if block.height == 0:
                break
            hash_ = block.header.prev_hash
        chain.reverse()
        return chain

    def contains_tx(self, txid: bytes) -> bool:
        """Whether `txid` is confirmed on the best chain"""
        return any(tx_id(tx) == txid for block in self.best_chain() for tx in block.transactions)


# Chain files

def write_chain_file(path: str, blocks: Iterable[Block]) -> None:
    with open(path, "wb") as handle:
        for block in blocks:
            handle.write(serialize_block(block))


def read_chain_file(path: str) -> List[Block]:
    """
    Raises:
        WireFormatError: the file is truncated or malformed
    """
    with open(path, "rb") as handle:
        data = handle.read()
    reader = io.BytesIO(data)
    blocks = []
    while reader.tell() < len(data):
        blocks.append(deserialize_block_from(reader))
    if not blocks:
        raise TruncatedInput(f"{os.path.basename(path)} holds no blocks")
    return blocks


def load_chain(blocks: Sequence[Block], subsidy: int, y_min: int, bootstrap_window: int) -> ChainState:
    """Re-validate a block sequence from its genesis block; the target is the genesis target"""
    genesis = blocks[0]
    config = ChainConfig(
        root_key=root_of_genesis(genesis),
        subsidy=subsidy,
        target=genesis.header.target,
        y_min=y_min,
        bootstrap_window=bootstrap_window,
    )
    chain = ChainState(config, genesis)
    for block in blocks[1:]:
        chain.connect_block(block)
    return chain
