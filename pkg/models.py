"""
Domain Models for Rolechain
Immutable value types shared by the transaction, ledger, hierarchy, policy,
consensus and simulation services
"""

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterator, Optional, Tuple, Union

NULL_TXID = bytes(32)
NULL_INDEX = 0xFFFFFFFF
UINT32_MAX = 2**32 - 1
UINT64_MAX = 2**64 - 1
PUBKEY_SIZE = 32
SIGNATURE_SIZE = 64
EMPTY_SIGNATURE = bytes(SIGNATURE_SIZE)


@dataclass(frozen=True, order=True)
class AccountKey:
    """An account is its 32-byte verification key; display_name is a simulator label only"""
    pubkey: bytes
    display_name: Optional[str] = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if len(self.pubkey) != PUBKEY_SIZE:
            raise ValueError(f"account key must be {PUBKEY_SIZE} bytes, got {len(self.pubkey)}")

    @property
    def label(self) -> str:
        return self.display_name or self.pubkey.hex()[:16]

    def __repr__(self) -> str:
        return f"AccountKey({self.label})"


NULL_KEY = AccountKey(bytes(PUBKEY_SIZE))

# Letter order used for display, matching the hierarchy legend
ROLE_LETTERS = "MCLUA"


@dataclass(frozen=True)
class RoleSet:
    has_u: bool = False
    has_a: bool = False
    has_c: bool = False
    has_l: bool = False
    has_m: bool = False

    @classmethod
    def from_letters(cls, letters: str) -> "RoleSet":
        letters = letters.upper()
        unknown = set(letters) - set(ROLE_LETTERS) - {"-"}
        if unknown:
            raise ValueError(f"unknown role letters: {''.join(sorted(unknown))}")
        return cls(
            has_u="U" in letters,
            has_a="A" in letters,
            has_c="C" in letters,
            has_l="L" in letters,
            has_m="M" in letters,
        )

    @classmethod
    def all_roles(cls) -> "RoleSet":
        return cls(True, True, True, True, True)

    def letters(self) -> str:
        held = {"M": self.has_m, "C": self.has_c, "L": self.has_l, "U": self.has_u, "A": self.has_a}
        return "".join(letter for letter in ROLE_LETTERS if held[letter])

    def as_set(self) -> FrozenSet[str]:
        return frozenset(self.letters())

    @property
    def is_empty(self) -> bool:
        return not self.letters()

    def __str__(self) -> str:
        return "{" + ",".join(self.letters()) + "}"


class TxMode(enum.IntEnum):
    """Transaction mode, identical to the transaction version number"""
    COIN_TRANSFER = 2
    ROLE_CHANGE = 3
    POLICY_CHANGE = 4


class PolicyParamId(enum.IntEnum):
    MINING_MODE = 0
    MGMT_TX_COUNT_X = 1
    MGMT_INTERVAL_Y = 2
    MAX_MINT_PER_TX = 3


MINING_INDEPENDENT = 0
MINING_DEPENDENT = 1


@dataclass(frozen=True, order=True)
class OutPoint:
    txid: bytes
    index: int

    @property
    def is_null(self) -> bool:
        return self.txid == NULL_TXID and self.index == NULL_INDEX

    def __repr__(self) -> str:
        return f"OutPoint({self.txid.hex()[:12]}:{self.index})"


NULL_OUTPOINT = OutPoint(NULL_TXID, NULL_INDEX)


@dataclass(frozen=True)
class TxInput:
    prevout: OutPoint
    signature: bytes = EMPTY_SIGNATURE
    signer: AccountKey = NULL_KEY
    law_override: bool = False


@dataclass(frozen=True)
class TxOutput:
    nvalue: int
    recipient: AccountKey


@dataclass(frozen=True)
class RolePayload:
    roles: RoleSet
    locked: bool = False


@dataclass(frozen=True)
class PolicyPayload:
    param_id: int
    permanent: bool
    value: int


@dataclass(frozen=True)
class Transaction:
    version: int
    inputs: Tuple[TxInput, ...]
    outputs: Tuple[TxOutput, ...]
    locktime: int = 0

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    @property
    def mode(self) -> TxMode:
        return TxMode(self.version)

    @property
    def has_null_input(self) -> bool:
        return len(self.inputs) == 1 and self.inputs[0].prevout.is_null

    @property
    def is_coinbase(self) -> bool:
        return self.version == TxMode.COIN_TRANSFER and self.has_null_input

    @property
    def is_genesis(self) -> bool:
        return self.version == TxMode.ROLE_CHANGE and self.has_null_input

    @property
    def is_management(self) -> bool:
        return self.version in (TxMode.ROLE_CHANGE, TxMode.POLICY_CHANGE) and not self.is_genesis


# UTXO entry kinds

@dataclass(frozen=True)
class Coin:
    amount: int
    coinbase_origin: bool = False


@dataclass(frozen=True)
class RoleRecord:
    payload: RolePayload


@dataclass(frozen=True)
class PolicyRecord:
    payload: PolicyPayload


EntryKind = Union[Coin, RoleRecord, PolicyRecord]


@dataclass(frozen=True)
class UtxoEntry:
    outpoint: OutPoint
    owner: AccountKey
    kind: EntryKind

    @property
    def is_coin(self) -> bool:
        return isinstance(self.kind, Coin)

    @property
    def is_role(self) -> bool:
        return isinstance(self.kind, RoleRecord)


@dataclass(frozen=True)
class RoleIndexEntry:
    roles: RoleSet
    locked: bool
    live_outpoint: OutPoint


@dataclass(frozen=True)
class HierarchyTree:
    """Parent-edge forest; accounts absent from `parent` are unregistered"""
    parent: Dict[AccountKey, Optional[AccountKey]] = field(default_factory=dict)
    root: Optional[AccountKey] = None

    def is_registered(self, node: AccountKey) -> bool:
        return node in self.parent


@dataclass(frozen=True)
class ScopeSet:
    members: FrozenSet[AccountKey] = frozenset()

    def __contains__(self, node: object) -> bool:
        return node in self.members

    def __iter__(self) -> Iterator[AccountKey]:
        return iter(sorted(self.members))

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class PolicyEntry:
    value: int
    permanent: bool
    setter_depth: int
    set_height: int


@dataclass(frozen=True)
class PolicyState:
    entries: Dict[int, PolicyEntry] = field(default_factory=dict)
    y_min: int = 16
    bootstrap_window: int = 20


@dataclass(frozen=True)
class WindowSample:
    """Per-block record for the dependent-mining rule; parameters are those in force entering the block"""
    height: int
    mgmt_count: int
    mining_mode: int
    x: int
    y: int


@dataclass(frozen=True)
class LedgerState:
    utxos: Dict[OutPoint, UtxoEntry]
    role_index: Dict[AccountKey, RoleIndexEntry]
    hierarchy: HierarchyTree
    policy: PolicyState
    height: int = 0
    spent: Dict[OutPoint, str] = field(default_factory=dict)
    windows: Tuple[WindowSample, ...] = ()
    block_hash: bytes = NULL_TXID

    def evolve(self, **changes) -> "LedgerState":
        return replace(self, **changes)


@dataclass(frozen=True)
class BlockHeader:
    prev_hash: bytes
    merkle_root: bytes
    height: int
    nonce: int
    target: int


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: Tuple[Transaction, ...]

    def __post_init__(self):
        object.__setattr__(self, "transactions", tuple(self.transactions))

    @property
    def height(self) -> int:
        return self.header.height


@dataclass(frozen=True)
class ChainConfig:
    root_key: AccountKey
    subsidy: int = 5_000_000_000
    target: int = 1 << 252
    y_min: int = 16
    bootstrap_window: int = 20


# Simulation

class AgentBehavior(enum.Enum):
    HONEST_MINER = "HONEST_MINER"
    MANAGER_FAVORED_MINER = "MANAGER_FAVORED_MINER"
    MANAGER = "MANAGER"
    LAW = "LAW"
    ACCOUNT_MANAGER = "ACCOUNT_MANAGER"
    USER = "USER"
    REPLAYER = "REPLAYER"

    @property
    def mines(self) -> bool:
        return self in (AgentBehavior.HONEST_MINER, AgentBehavior.MANAGER_FAVORED_MINER)


@dataclass(frozen=True)
class ScenarioEvent:
    """One scripted line; tick is None for assertions evaluated after the horizon"""
    tick: Optional[int]
    actor: str
    action: str
    args: Dict[str, str]
    line_number: int = 0


@dataclass(frozen=True)
class ScenarioScript:
    events: Tuple[ScenarioEvent, ...]
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))


@dataclass(frozen=True)
class SimConfig:
    seed: int
    scenario: ScenarioScript
    node_count: int = 5
    latency: Tuple[int, int] = (1, 1)
    hash_shares: Dict[str, float] = field(default_factory=dict)
    block_rate: float = 0.1
    horizon: int = 200
    root: str = "node0"


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    node: str
    event: str
    details: Tuple[Tuple[str, str], ...] = ()

    def to_line(self) -> str:
        parts = [str(self.tick), self.node, self.event]
        parts.extend(f"{key}={value}" for key, value in self.details)
        return " | ".join(parts)


@dataclass(frozen=True)
class SimTrace:
    events: Tuple[TraceEvent, ...]
    summaries: Tuple[str, ...]
    failures: Tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_text(self) -> str:
        lines = [event.to_line() for event in self.events]
        lines.extend(self.summaries)
        lines.extend(f"FAIL | {failure}" for failure in self.failures)
        return "\n".join(lines) + "\n"
