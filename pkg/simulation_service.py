"""
Simulation Service for Rolechain
Deterministic discrete-event network of miners, managers, law enforcement and
users exchanging transactions and blocks under a scripted scenario
"""

import heapq
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from analytics_service import ChainAnalyticsService
from app import NodeConfig
from consensus_service import ChainState, block_hash, mine_block
from errors import AssertionFailed, HierarchyError, RolechainError, ScriptError
from hierarchy_service import export_dot, law_scope, manager_scope
from ledger_service import apply_transaction, balance, coins_of, role_of, total_coin
from models import (
    MINING_DEPENDENT, AgentBehavior, Block, ChainConfig, HierarchyTree, LedgerState,
    PolicyParamId, PolicyPayload, RolePayload, RoleSet, ScenarioEvent, SimConfig, SimTrace, Transaction,
    TraceEvent,
)
from policy_service import effective, param_by_name
from scenario_parser import SIM_ACTOR, ScenarioParser, build_sim_config
from transaction_service import (
    KeyPair, build_policy_change, build_role_change, build_transfer, make_input, sign_transaction, tx_id,
)
from validation_service import ValidationService

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenarios")

# Extra ticks allowed after the horizon for scripted work to confirm and tips to converge
SETTLE_LIMIT = 2000

# Blocks a coinbase output must be buried under before an agent spends it
COINBASE_MATURITY = 3

MGMT_ACTIONS = frozenset({"grant", "remove", "lock", "unlock", "refresh", "policy"})
RESERVED_ARGS = frozenset({"label", "after", "send"})
NAME_ARGS = ("target", "to", "from")
LIST_ARGS = ("members", "miners")


class IntentFailed(Exception):
    """A scripted action that cannot be turned into a transaction from the actor's view"""


class Deferred(Exception):
    """A scripted action that must wait for the actor's chain view to change"""


@dataclass(order=True)
class Message:
    deliver_at: int
    seq: int
    kind: str = field(compare=False)
    payload: object = field(compare=False)
    sender: str = field(compare=False)
    recipient: str = field(compare=False)


class NodeAgent:
    """One simulated node: keys, a chain view, a mempool and the records assertions read"""

    def __init__(self, name: str, behavior: AgentBehavior, share: float, chain_config: ChainConfig,
                 display: Optional[str] = None):
        self.name = name
        self.behavior = behavior
        self.share = share
        self.display = display
        self.keypair = KeyPair.from_label(name)
        self.chain = ChainState(chain_config)
        self.mempool: Dict[bytes, Transaction] = {}
        self.known_txs: Dict[bytes, Transaction] = {}
        self.private: Set[bytes] = set()
        self.orphans: Dict[bytes, List[Block]] = {}
        self.invalid_blocks: Set[bytes] = set()
        self.confirmed: Set[bytes] = self._chain_txids()
        self.own_pending: Dict[bytes, Transaction] = {}
        self.rejections: List[Tuple[int, bytes, str]] = []
        self.blocked: List[Tuple[int, str]] = []
        self.auto_mgmt: Optional[str] = None

    @property
    def key(self):
        return self.keypair.account

    @property
    def tip_state(self) -> LedgerState:
        return self.chain.tip_state

    @property
    def mines(self) -> bool:
        return self.behavior.mines and self.share > 0

    def next_state(self) -> LedgerState:
        """Tip state positioned at the height of the next block"""
        return self.tip_state.evolve(height=self.chain.height + 1)

    def _chain_txids(self) -> Set[bytes]:
        return {tx_id(tx) for block in self.chain.best_chain() for tx in block.transactions}

    def may_relay(self, txid: bytes, tx: Transaction) -> bool:
        if txid in self.private:
            return False
        return not (self.behavior == AgentBehavior.MANAGER_FAVORED_MINER and tx.is_management)

    def accept_tx(self, tx: Transaction) -> Optional[str]:
        """Validate against the tip; returns the rejection code or None when added to the mempool"""
        txid = tx_id(tx)
        try:
            ValidationService.validate_transaction(tx, self.next_state())
        except RolechainError as e:
            return e.code
        self.mempool[txid] = tx
        self.known_txs[txid] = tx
        return None

    def connect(self, block: Block) -> bool:
        old_tip = self.chain.tip
        moved = self.chain.connect_block(block)
        if moved:
            self._refresh_views(block, old_tip)
        return moved

    def _refresh_views(self, block: Block, old_tip: bytes) -> None:
        if block.header.prev_hash == old_tip:
            confirmed = self.confirmed | {tx_id(tx) for tx in block.transactions}
        else:
            confirmed = self._chain_txids()
        for txid in sorted(self.confirmed - confirmed):
            tx = self.known_txs.get(txid)
            if tx is not None and not tx.is_coinbase:
                self.mempool[txid] = tx
        for txid in confirmed & set(self.mempool):
            del self.mempool[txid]
        self.confirmed = confirmed

    def pending(self, management: Optional[bool] = None) -> Dict[bytes, Transaction]:
        """Own submitted transactions that are unconfirmed and still valid on the tip"""
        state = self.next_state()
        for txid in list(self.own_pending):
            if txid in self.confirmed:
                del self.own_pending[txid]
                continue
            ok, _ = ValidationService.check_transaction(self.own_pending[txid], state)
            if not ok:
                del self.own_pending[txid]
        return {
            txid: tx for txid, tx in self.own_pending.items()
            if management is None or tx.is_management == management
        }

    def free_coins(self) -> List:
        """Spendable coins not reserved by pending transactions; young coinbase outputs are held back"""
        reserved = {txin.prevout for tx in self.pending().values() for txin in tx.inputs}
        chain = self.chain.best_chain()
        buried = self.chain.state_at(block_hash(chain[max(0, len(chain) - 1 - COINBASE_MATURITY)])).utxos
        return [
            entry for entry in coins_of(self.tip_state, self.key)
            if entry.outpoint not in reserved and (not entry.kind.coinbase_origin or entry.outpoint in buried)
        ]

    def build_template(self) -> List[Transaction]:
        state = self.next_state()
        height = state.height
        include_mgmt = True
        if self.behavior == AgentBehavior.MANAGER_FAVORED_MINER:
            y = effective(PolicyParamId.MGMT_INTERVAL_Y, state.policy)
            dependent = effective(PolicyParamId.MINING_MODE, state.policy) == MINING_DEPENDENT
            include_mgmt = dependent and height % y == 0
        template = []
        for tx in self.mempool.values():
            if tx.is_management and not include_mgmt:
                continue
            try:
                ValidationService.validate_transaction(tx, state)
            except RolechainError:
                continue
            state = apply_transaction(tx, state)
            template.append(tx)
        return template


class NetworkSimulator:
    """Runs one scenario to completion; every random draw comes from a single seeded generator"""

    def __init__(self, config: SimConfig, chain_config: Optional[ChainConfig] = None):
        self.logger = logging.getLogger(__name__)
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.analytics = ChainAnalyticsService()
        self.events: List[TraceEvent] = []
        self.failures: List[str] = []
        self.queue: List[Message] = []
        self.seq = 0
        self.tick = 0
        self.groups: Optional[List[Set[str]]] = None
        self.labels: Dict[str, bytes] = {}
        self.label_txs: Dict[bytes, Transaction] = {}
        self.replays: Dict[bytes, Tuple[str, int]] = {}
        self.deferred: List[ScenarioEvent] = []
        self.trace: Optional[SimTrace] = None

        declared = {e.actor: e for e in config.scenario.events if e.action == "agent"}
        if config.root not in config.hash_shares:
            raise ScriptError(f"root {config.root!r} is not an agent")
        root_key = KeyPair.from_label(config.root).account
        self.chain_config = chain_config or ChainConfig(root_key=root_key)
        if self.chain_config.root_key != root_key:
            raise ScriptError(f"chain configuration root does not belong to {config.root}")

        self.agents: Dict[str, NodeAgent] = {}
        for name in sorted(config.hash_shares):
            event = declared.get(name)
            behavior = AgentBehavior(event.args["behavior"].upper()) if event else AgentBehavior.HONEST_MINER
            display = event.args.get("display") if event else None
            self.agents[name] = NodeAgent(name, behavior, config.hash_shares[name], self.chain_config, display)
        self.names = {agent.key: agent.name for agent in self.agents.values()}
        self._check_script()

    # Setup checks

    def _check_script(self) -> None:
        defined_labels = {e.args["label"] for e in self.config.scenario.events if "label" in e.args}
        for event in self.config.scenario.events:
            if event.actor != SIM_ACTOR and event.actor not in self.agents:
                raise ScriptError(f"unknown agent {event.actor!r}", event.line_number)
            for key in NAME_ARGS:
                if key in event.args and event.args[key] not in self.agents:
                    raise ScriptError(f"unknown agent {event.args[key]!r}", event.line_number)
            for key in LIST_ARGS:
                for name in self._split(event.args.get(key, "")):
                    if name not in self.agents:
                        raise ScriptError(f"unknown agent {name!r}", event.line_number)
            parent = event.args.get("parent", "none")
            if parent != "none" and parent not in self.agents:
                raise ScriptError(f"unknown agent {event.args['parent']!r}", event.line_number)
            references = self._split(event.args.get("after", ""))
            if event.action in ("replay", "assert") and "tx" in event.args:
                references.append(event.args["tx"])
            for label in references:
                if label not in defined_labels:
                    raise ScriptError(f"undefined label {label!r}", event.line_number)
            if event.action == "replay" and self.agents[event.actor].behavior != AgentBehavior.REPLAYER:
                raise ScriptError(f"{event.actor} is not a REPLAYER", event.line_number)
            if event.args.get("send", "all") not in ("all", "favored"):
                raise ScriptError("send must be all or favored", event.line_number)

    @staticmethod
    def _split(text: str, separator: str = ",") -> List[str]:
        return [part.strip() for part in text.split(separator) if part.strip()]

    # Tracing and messaging

    def _trace(self, node: str, event: str, **details) -> None:
        self.events.append(TraceEvent(self.tick, node, event, tuple((k, str(v)) for k, v in details.items())))

    def _send(self, sender: str, recipient: str, kind: str, payload) -> None:
        if self.groups is not None:
            same = any(sender in group and recipient in group for group in self.groups)
            if not same:
                return
        low, high = self.config.latency
        delay = low if low == high else int(self.rng.integers(low, high + 1))
        self.seq += 1
        heapq.heappush(self.queue, Message(self.tick + delay, self.seq, kind, payload, sender, recipient))

    def _broadcast(self, sender: str, kind: str, payload, recipients: Optional[Sequence[str]] = None) -> None:
        for name in recipients if recipients is not None else self.agents:
            if name != sender:
                self._send(sender, name, kind, payload)

    def _deliver(self) -> None:
        while self.queue and self.queue[0].deliver_at <= self.tick:
            message = heapq.heappop(self.queue)
            agent = self.agents[message.recipient]
            if message.kind == "tx":
                self._receive_tx(agent, message.payload)
            else:
                self._receive_block(agent, message.payload)

    def _receive_tx(self, agent: NodeAgent, tx: Transaction) -> None:
        txid = tx_id(tx)
        if txid in agent.mempool:
            return
        code = agent.accept_tx(tx)
        if code is not None:
            agent.rejections.append((self.tick, txid, code))
            self._trace(agent.name, "reject_tx", txid=txid.hex()[:16], error=code)
            return
        if agent.may_relay(txid, tx):
            self._broadcast(agent.name, "tx", tx)

    def _receive_block(self, agent: NodeAgent, block: Block) -> None:
        hash_ = block_hash(block)
        if agent.chain.has_block(hash_) or hash_ in agent.invalid_blocks:
            return
        if not agent.chain.has_block(block.header.prev_hash):
            waiting = agent.orphans.setdefault(block.header.prev_hash, [])
            if all(block_hash(other) != hash_ for other in waiting):
                waiting.append(block)
            return
        pending = [block]
        while pending:
            current = pending.pop(0)
            current_hash = block_hash(current)
            old_tip = agent.chain.tip
            try:
                agent.connect(current)
            except RolechainError as e:
                agent.invalid_blocks.add(current_hash)
                self._trace(agent.name, "reject_block", hash=current_hash.hex()[:16], error=e.code)
                continue
            if agent.chain.tip == current_hash and current.header.prev_hash != old_tip:
                self._trace(agent.name, "reorg", height=current.height, tip=current_hash.hex()[:16])
            self._broadcast(agent.name, "block", current)
            pending.extend(agent.orphans.pop(current_hash, []))

    # Mining

    def _mine(self) -> None:
        for name in sorted(self.agents):
            agent = self.agents[name]
            if not agent.mines:
                continue
            if self.rng.random() >= self.config.block_rate * agent.share:
                continue
            seed = int(self.rng.integers(0, 2**32))
            template = agent.build_template()
            try:
                block = mine_block(template, agent.tip_state, agent.key, self.chain_config, seed)
                agent.connect(block)
            except RolechainError as e:
                agent.blocked.append((self.tick, e.code))
                self._trace(name, "mining_blocked", height=agent.chain.height + 1, error=e.code)
                continue
            hash_ = block_hash(block)
            self._trace(name, "mined", height=block.height, hash=hash_.hex()[:16], txs=len(block.transactions))
            self._broadcast(name, "block", block)

    # Scripted actions

    def _submit(self, agent: NodeAgent, tx: Transaction, event: Optional[ScenarioEvent]) -> None:
        txid = tx_id(tx)
        send = event.args.get("send", "all") if event else (agent.auto_mgmt or "all")
        label = event.args.get("label") if event else None
        if label:
            self.labels[label] = txid
            self.label_txs[txid] = tx
        agent.own_pending[txid] = tx
        agent.known_txs[txid] = tx
        details = {"label": label} if label else {}
        self._trace(agent.name, "submit", action=event.action if event else "refresh",
                    txid=txid.hex()[:16], **details)
        code = agent.accept_tx(tx)
        if code is not None:
            agent.rejections.append((self.tick, txid, code))
            self._trace(agent.name, "reject_tx", txid=txid.hex()[:16], error=code)
        recipients = None
        if send == "favored":
            agent.private.add(txid)
            recipients = [
                name for name, other in self.agents.items()
                if other.behavior == AgentBehavior.MANAGER_FAVORED_MINER
            ]
        self._broadcast(agent.name, "tx", tx, recipients)

    def _role_change(self, agent: NodeAgent, event: ScenarioEvent,
                     transform: Callable[[RolePayload], RolePayload]) -> Transaction:
        state = agent.tip_state
        issuer_entry = state.role_index.get(agent.key)
        if issuer_entry is None:
            raise IntentFailed(f"{agent.name} holds no role output")
        target = self.agents[event.args["target"]].key if "target" in event.args else agent.key
        new = transform(role_of(state, target))
        role_inputs = [issuer_entry.live_outpoint]
        if target == agent.key:
            assignments = [(agent.key, new)]
        else:
            target_entry = state.role_index.get(target)
            if target_entry is not None:
                role_inputs.append(target_entry.live_outpoint)
            assignments = [(agent.key, role_of(state, agent.key)), (target, new)]
        return build_role_change(agent.key, role_inputs, assignments)

    def _policy_change(self, agent: NodeAgent, event: ScenarioEvent) -> Transaction:
        state = agent.tip_state
        issuer_entry = state.role_index.get(agent.key)
        if issuer_entry is None:
            raise IntentFailed(f"{agent.name} holds no role output")
        permanent = {param_by_name(name) for name in self._split(event.args.get("permanent", ""))}
        payloads = []
        for key, value in event.args.items():
            if key in RESERVED_ARGS or key == "permanent":
                continue
            try:
                param = param_by_name(key)
                payloads.append(PolicyPayload(int(param), param in permanent, int(value)))
            except (RolechainError, ValueError) as e:
                raise ScriptError(f"bad policy argument {key}={value}: {e}", event.line_number) from None
        return build_policy_change(agent.key, issuer_entry.live_outpoint, role_of(state, agent.key), payloads)

    def _pay(self, agent: NodeAgent, event: ScenarioEvent) -> Transaction:
        amount = int(event.args["amount"])
        fee = int(event.args.get("fee", 0))
        selected, total = [], 0
        for entry in agent.free_coins():
            if total >= amount + fee:
                break
            selected.append(entry)
            total += entry.kind.amount
        if total < amount + fee or not selected:
            raise Deferred()
        payments = [(self.agents[event.args["to"]].key, amount)]
        if total - amount - fee > 0:
            payments.append((agent.key, total - amount - fee))
        return build_transfer([make_input(entry.outpoint, agent.key) for entry in selected], payments)

    def _mint(self, agent: NodeAgent, event: ScenarioEvent) -> Transaction:
        coins = agent.free_coins()
        if not coins:
            raise Deferred()
        coin = coins[0]
        to = self.agents[event.args["to"]].key if "to" in event.args else agent.key
        payments = [(to, int(event.args["amount"])), (agent.key, coin.kind.amount)]
        return build_transfer([make_input(coin.outpoint, agent.key)], payments)

    def _seize(self, agent: NodeAgent, event: ScenarioEvent) -> Transaction:
        source = self.agents[event.args["from"]].key
        coins = coins_of(agent.tip_state, source)
        if not coins:
            raise Deferred()
        to = self.agents[event.args["to"]].key if "to" in event.args else agent.key
        inputs = [make_input(entry.outpoint, agent.key, law_override=True) for entry in coins]
        return build_transfer(inputs, [(to, sum(entry.kind.amount for entry in coins))])

    def _build(self, agent: NodeAgent, event: ScenarioEvent) -> Transaction:
        action = event.action
        if action == "grant":
            letters = event.args["roles"]
            tx = self._role_change(agent, event, lambda old: RolePayload(
                RoleSet.from_letters(old.roles.letters() + letters), old.locked))
        elif action == "remove":
            letters = event.args.get("roles")
            tx = self._role_change(agent, event, lambda old: RolePayload(
                RoleSet.from_letters("".join(sorted(old.roles.as_set() - set(letters.upper()))) if letters else ""),
                old.locked))
        elif action == "lock":
            tx = self._role_change(agent, event, lambda old: RolePayload(old.roles, True))
        elif action == "unlock":
            tx = self._role_change(agent, event, lambda old: RolePayload(old.roles, False))
        elif action == "refresh":
            tx = self._role_change(agent, event, lambda old: old)
        elif action == "policy":
            tx = self._policy_change(agent, event)
        elif action == "pay":
            tx = self._pay(agent, event)
        elif action == "mint":
            tx = self._mint(agent, event)
        else:
            tx = self._seize(agent, event)
        return sign_transaction(tx, [agent.keypair])

    def _ready(self, agent: NodeAgent, event: ScenarioEvent) -> bool:
        for label in self._split(event.args.get("after", "")):
            txid = self.labels.get(label)
            if txid is None or txid not in agent.confirmed:
                return False
        if event.action in MGMT_ACTIONS and agent.pending(management=True):
            return False
        return True

    def _perform(self, event: ScenarioEvent) -> bool:
        """Run one scripted event; False means it stays deferred"""
        action = event.action
        if action in ("config", "agent"):
            return True
        if action == "partition":
            self.groups = [set(self._split(group)) for group in event.args["groups"].split(";")]
            self._trace(SIM_ACTOR, "partition", groups=event.args["groups"])
            return True
        if action == "heal":
            self.groups = None
            self._trace(SIM_ACTOR, "heal")
            self._rebroadcast()
            return True
        if action == "assert":
            self._assert(event)
            return True

        agent = self.agents[event.actor]
        if action == "auto_mgmt":
            agent.auto_mgmt = event.args.get("send", "all")
            return True
        if not self._ready(agent, event):
            return False
        if action == "replay":
            txid = self.labels[event.args["tx"]]
            self.replays[txid] = (agent.name, self.tick)
            self._trace(agent.name, "replay", label=event.args["tx"], txid=txid.hex()[:16])
            self._broadcast(agent.name, "tx", self.label_txs[txid])
            return True
        try:
            tx = self._build(agent, event)
        except Deferred:
            return False
        except (IntentFailed, RolechainError, ValueError) as e:
            self._trace(agent.name, "intent_failed", action=action, line=event.line_number, reason=str(e))
            return True
        self._submit(agent, tx, event)
        return True

    def _rebroadcast(self) -> None:
        for name in sorted(self.agents):
            agent = self.agents[name]
            for block in agent.chain.best_chain()[1:]:
                self._broadcast(name, "block", block)
            for txid, tx in agent.mempool.items():
                if agent.may_relay(txid, tx):
                    self._broadcast(name, "tx", tx)

    def _auto_behaviors(self) -> None:
        for name in sorted(self.agents):
            agent = self.agents[name]
            if agent.auto_mgmt is None or agent.pending(management=True):
                continue
            if agent.key not in agent.tip_state.role_index:
                continue
            tx = build_role_change(agent.key, [agent.tip_state.role_index[agent.key].live_outpoint],
                                   [(agent.key, role_of(agent.tip_state, agent.key))])
            self._submit(agent, sign_transaction(tx, [agent.keypair]), None)

    def _step(self, events: Sequence[ScenarioEvent], mining: bool) -> None:
        self._deliver()
        still = []
        for event in self.deferred:
            if not self._perform(event):
                still.append(event)
        self.deferred = still
        for event in events:
            if not self._perform(event):
                self.deferred.append(event)
        self._auto_behaviors()
        if mining:
            self._mine()

    def _settled(self) -> bool:
        if self.queue or self.deferred:
            return False
        if len({agent.chain.tip for agent in self.agents.values()}) != 1:
            return False
        labelled = set(self.labels.values())
        return not any(set(agent.pending()) & labelled for agent in self.agents.values())

    def run(self) -> SimTrace:
        timed: Dict[int, List[ScenarioEvent]] = {}
        closing = []
        for event in self.config.scenario.events:
            if event.tick is None:
                closing.append(event)
            else:
                timed.setdefault(event.tick, []).append(event)

        for tick in range(0, self.config.horizon + 1):
            self.tick = tick
            self._step(timed.get(tick, []), mining=tick > 0)
        limit = self.config.horizon + SETTLE_LIMIT
        while not self._settled() and self.tick < limit:
            self.tick += 1
            self._step([], mining=True)
        while self.queue:
            self.tick = self.queue[0].deliver_at
            self._deliver()
        for event in self.deferred:
            self._trace(event.actor, "dropped", action=event.action, line=event.line_number)

        for event in closing:
            self._assert(event)
        self.trace = SimTrace(events=tuple(self.events), summaries=tuple(self._summaries()),
                              failures=tuple(self.failures))
        return self.trace

    def _summaries(self) -> List[str]:
        lines = []
        for name in sorted(self.agents):
            agent = self.agents[name]
            state = agent.tip_state
            lines.append(" | ".join([
                "end", name, "summary", f"height={agent.chain.height}",
                f"tip={agent.chain.tip.hex()[:16]}", f"balance={balance(state, agent.key)}",
                f"roles={role_of(state, agent.key).roles.letters() or '-'}",
                f"total_coin={total_coin(state)}",
            ]))
        return lines

    # Views used by the command line

    @property
    def observer(self) -> NodeAgent:
        return self.agents[self.config.root]

    def best_chain(self) -> List[Block]:
        return self.observer.chain.best_chain()

    def display_names(self) -> Dict:
        return {agent.key: agent.display or agent.name for agent in self.agents.values()}

    def hierarchy(self) -> HierarchyTree:
        return self.observer.tip_state.hierarchy

    def dot_source(self) -> str:
        state = self.observer.tip_state
        shown = [
            agent.key for agent in self.agents.values()
            if agent.display and not state.hierarchy.is_registered(agent.key)
        ]
        return export_dot(state.hierarchy, state.role_index, self.display_names(), shown)

    # Assertions

    def _assert(self, event: ScenarioEvent) -> None:
        predicate = event.args["predicate"]
        check = getattr(self, f"_check_{predicate}")
        if event.actor == SIM_ACTOR:
            views = [self.agents[name] for name in sorted(self.agents)]
        else:
            views = [self.agents[event.actor]]
        problems = []
        try:
            for agent in views:
                detail = check(agent, event.args)
                if detail:
                    problems.append(f"{agent.name}: {detail}")
                if predicate in ("tips_equal", "replay_rejected"):
                    break
        except (RolechainError, ValueError, KeyError) as e:
            problems.append(f"{type(e).__name__}: {e}")
        tick = "end" if event.tick is None else str(event.tick)
        if problems:
            failure = AssertionFailed(tick, predicate, "; ".join(problems))
            self.failures.append(str(failure))
            self._trace(event.actor, "assert", predicate=predicate, result="fail")
        else:
            self._trace(event.actor, "assert", predicate=predicate, result="pass")

    def _key(self, name: str):
        return self.agents[name].key

    def _name_set(self, members) -> Set[str]:
        return {self.names.get(key, key.label) for key in members}

    def _check_tips_equal(self, agent: NodeAgent, args) -> Optional[str]:
        tips = {other.chain.tip for other in self.agents.values()}
        if len(tips) != 1:
            return f"{len(tips)} distinct tips"
        return None

    def _check_roles(self, agent: NodeAgent, args) -> Optional[str]:
        payload = role_of(agent.tip_state, self._key(args["target"]))
        expected = RoleSet.from_letters(args.get("roles", "-"))
        if payload.roles != expected:
            return f"{args['target']} holds {payload.roles}, expected {expected}"
        if "locked" in args and payload.locked != (args["locked"].lower() == "true"):
            return f"{args['target']} locked={payload.locked}"
        return None

    def _check_unregistered(self, agent: NodeAgent, args) -> Optional[str]:
        if agent.tip_state.hierarchy.is_registered(self._key(args["target"])):
            return f"{args['target']} is registered"
        return None

    def _check_parent(self, agent: NodeAgent, args) -> Optional[str]:
        tree = agent.tip_state.hierarchy
        target = self._key(args["target"])
        if not tree.is_registered(target):
            return f"{args['target']} is not registered"
        parent = tree.parent[target]
        actual = self.names.get(parent, "none") if parent is not None else "none"
        if actual != args.get("parent", "none"):
            return f"parent of {args['target']} is {actual}"
        return None

    def _check_scope(self, scope, args) -> Optional[str]:
        expected = set(self._split(args.get("members", "")))
        actual = self._name_set(scope)
        if actual != expected:
            return f"scope {sorted(actual)} != {sorted(expected)}"
        return None

    def _check_law_scope(self, agent: NodeAgent, args) -> Optional[str]:
        state = agent.tip_state
        try:
            scope = law_scope(self._key(args["target"]), state.hierarchy, state.role_index)
        except HierarchyError as e:
            return str(e)
        return self._check_scope(scope, args)

    def _check_manager_scope(self, agent: NodeAgent, args) -> Optional[str]:
        state = agent.tip_state
        scope = manager_scope(self._key(args["target"]), state.hierarchy, state.role_index)
        return self._check_scope(scope, args)

    def _check_accepted(self, agent: NodeAgent, args) -> Optional[str]:
        if self.labels[args["tx"]] not in agent.confirmed:
            return f"{args['tx']} is not confirmed"
        return None

    def _check_rejected(self, agent: NodeAgent, args) -> Optional[str]:
        txid = self.labels[args["tx"]]
        if txid in agent.confirmed:
            return f"{args['tx']} was confirmed"
        codes = {code for _, rejected, code in agent.rejections if rejected == txid}
        if not codes:
            return f"{args['tx']} was never rejected"
        if "error" in args and args["error"] not in codes:
            return f"{args['tx']} rejected with {sorted(codes)}, expected {args['error']}"
        return None

    def _check_replay_rejected(self, agent: NodeAgent, args) -> Optional[str]:
        txid = self.labels[args["tx"]]
        if txid not in self.replays:
            return f"{args['tx']} was never replayed"
        replayer, replay_tick = self.replays[txid]
        for other in self.agents.values():
            count = sum(1 for block in other.chain.best_chain() for tx in block.transactions if tx_id(tx) == txid)
            if count != 1:
                return f"{other.name} holds {args['tx']} {count} times"
            if other.name == replayer:
                continue
            if not any(rejected == txid and tick >= replay_tick for tick, rejected, _ in other.rejections):
                return f"{other.name} did not reject the replay"
        return None

    def _check_no_duplicate_txids(self, agent: NodeAgent, args) -> Optional[str]:
        duplicates = self.analytics.duplicate_txids(agent.chain.best_chain())
        if duplicates:
            return f"{len(duplicates)} duplicate txids"
        return None

    def _check_window_compliant(self, agent: NodeAgent, args) -> Optional[str]:
        bad = [window for window in self.analytics.window_report(agent.chain.best_chain()) if not window["ok"]]
        if bad:
            return f"window {bad[0]['index']} holds {bad[0]['found']} of {bad[0]['required']}"
        return None

    def _check_conservation(self, agent: NodeAgent, args) -> Optional[str]:
        fold = self.analytics.conservation(agent.chain.best_chain())
        ledger_total = total_coin(agent.tip_state)
        if not fold["balanced"] or fold["total"] != ledger_total:
            return f"fold {fold} vs ledger total {ledger_total}"
        return None

    def _check_block_share(self, agent: NodeAgent, args) -> Optional[str]:
        miners = [self._key(name) for name in self._split(args["miners"])]
        share = self.analytics.share_of(agent.chain.best_chain(), miners)
        if share is None:
            return "no blocks mined"
        if share < float(args.get("min", 0)) or share > float(args.get("max", 1)):
            return f"share {share:.4f} outside [{args.get('min', 0)}, {args.get('max', 1)}]"
        return None

    def _check_balance(self, agent: NodeAgent, args) -> Optional[str]:
        amount = balance(agent.tip_state, self._key(args["target"]))
        if "amount" in args and amount != int(args["amount"]):
            return f"{args['target']} holds {amount}"
        if amount < int(args.get("min", 0)):
            return f"{args['target']} holds {amount}"
        return None

    def _check_height(self, agent: NodeAgent, args) -> Optional[str]:
        height = agent.chain.height
        if height < int(args.get("min", 0)) or ("max" in args and height > int(args["max"])):
            return f"height {height}"
        return None

    def _check_mining_blocked(self, agent: NodeAgent, args) -> Optional[str]:
        codes = {code for _, code in agent.blocked}
        expected = args.get("error")
        if (expected is None and not codes) or (expected is not None and expected not in codes):
            return f"mining was not blocked by {args.get('error', 'any rule')}"
        return None


def run_scenario(config: SimConfig) -> SimTrace:
    return NetworkSimulator(config).run()


def run_scenario_file(path: str, seed: int = 0, node_config: Optional[NodeConfig] = None) -> NetworkSimulator:
    """Parse, configure and run a scenario file; the finished simulator is returned for inspection"""
    script = ScenarioParser().parse_file(path)
    config = build_sim_config(script, seed)
    chain_config = None
    if node_config is not None:
        chain_config = node_config.chain_config(KeyPair.from_label(config.root).account)
    simulator = NetworkSimulator(config, chain_config)
    simulator.run()
    return simulator


def scenario_fig4(seed: int = 0) -> Tuple[SimTrace, HierarchyTree]:
    """Run the shipped twelve-node example hierarchy"""
    simulator = run_scenario_file(os.path.join(SCENARIO_DIR, "fig4.scn"), seed)
    return simulator.trace, simulator.hierarchy()


def freeze_miner_scenario(seed: int = 0, dependent: bool = False) -> SimTrace:
    name = "freeze_dependent.scn" if dependent else "freeze.scn"
    return run_scenario_file(os.path.join(SCENARIO_DIR, name), seed).trace
