"""
Scenario Parser for Rolechain
Reads the line-oriented scenario format into a ScenarioScript and derives the
simulator configuration from it
"""

import logging
import os
from typing import Dict, List, Optional, Tuple

from errors import ScriptError
from models import AgentBehavior, ScenarioEvent, ScenarioScript, SimConfig

SIM_ACTOR = "sim"
END_TICK = "end"

# action -> required argument keys
ACTIONS: Dict[str, Tuple[str, ...]] = {
    "config": (),
    "agent": ("behavior",),
    "advance": ("ticks",),
    "grant": ("target", "roles"),
    "remove": ("target",),
    "lock": ("target",),
    "unlock": ("target",),
    "refresh": (),
    "policy": (),
    "pay": ("to", "amount"),
    "mint": ("amount",),
    "seize": ("from",),
    "replay": ("tx",),
    "auto_mgmt": (),
    "partition": ("groups",),
    "heal": (),
    "assert": ("predicate",),
}

SIM_ACTIONS = frozenset({"config", "advance", "partition", "heal"})
CONFIG_KEYS = frozenset({"root", "block_rate", "latency", "horizon", "node_count"})

PREDICATES = frozenset({
    "tips_equal", "roles", "unregistered", "parent", "law_scope", "manager_scope", "accepted",
    "rejected", "replay_rejected", "no_duplicate_txids", "window_compliant", "conservation",
    "block_share", "balance", "height", "mining_blocked",
})


class ScenarioParser:
    """
    Parses scenario text. One event per line:

        tick | actor | action | key=value | key=value ...

    `tick` is a non-negative integer or `end`; `#` starts a comment line.
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def parse_file(self, path: str) -> ScenarioScript:
        if not os.path.isfile(path):
            raise ScriptError(f"scenario file not found: {path}")
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
        name = os.path.splitext(os.path.basename(path))[0]
        return self.parse_text(text, name)

    def parse_text(self, text: str, name: str = "scenario") -> ScenarioScript:
        events: List[ScenarioEvent] = []
        origin = 0
        for line_number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            event = self._parse_line(line, line_number, origin)
            if event.action == "advance":
                origin += self._int_arg(event, "ticks", minimum=0)
                continue
            events.append(event)

        # stable: same-tick events keep file order, `end` assertions run last
        events.sort(key=lambda event: (event.tick is None, event.tick or 0))
        self.logger.debug(f"Parsed {len(events)} events from {name}")
        return ScenarioScript(events=tuple(events), name=name)

    def _parse_line(self, line: str, line_number: int, origin: int) -> ScenarioEvent:
        fields = [field.strip() for field in line.split("|")]
        if len(fields) < 3:
            raise ScriptError("expected `tick | actor | action`", line_number)
        tick_text, actor, action = fields[:3]
        if action not in ACTIONS:
            raise ScriptError(f"unknown action {action!r}", line_number)
        if not actor:
            raise ScriptError("missing actor", line_number)
        if action in SIM_ACTIONS and actor != SIM_ACTOR:
            raise ScriptError(f"{action} must be issued by {SIM_ACTOR}", line_number)

        tick: Optional[int]
        if tick_text == END_TICK:
            if action != "assert":
                raise ScriptError("only assertions may run at `end`", line_number)
            tick = None
        else:
            try:
                tick = int(tick_text)
            except ValueError:
                raise ScriptError(f"bad tick {tick_text!r}", line_number) from None
            if tick < 0:
                raise ScriptError("tick must not be negative", line_number)
            tick += origin

        args: Dict[str, str] = {}
        for field in fields[3:]:
            if not field:
                continue
            if "=" in field:
                key, value = (part.strip() for part in field.split("=", 1))
                if key in args:
                    raise ScriptError(f"duplicate argument {key!r}", line_number)
                args[key] = value
            elif action == "assert" and "predicate" not in args:
                args["predicate"] = field
            else:
                raise ScriptError(f"expected key=value, got {field!r}", line_number)

        missing = [key for key in ACTIONS[action] if key not in args]
        if missing:
            raise ScriptError(f"{action} needs {', '.join(missing)}", line_number)
        if action == "assert" and args["predicate"] not in PREDICATES:
            raise ScriptError(f"unknown predicate {args['predicate']!r}", line_number)
        if action == "agent":
            try:
                AgentBehavior(args["behavior"].upper())
            except ValueError:
                raise ScriptError(f"unknown behavior {args['behavior']!r}", line_number) from None
        if action == "config":
            unknown = set(args) - CONFIG_KEYS
            if unknown:
                raise ScriptError(f"unknown config keys: {', '.join(sorted(unknown))}", line_number)
        return ScenarioEvent(tick=tick, actor=actor, action=action, args=args, line_number=line_number)

    @staticmethod
    def _int_arg(event: ScenarioEvent, key: str, minimum: int = 0) -> int:
        try:
            value = int(event.args[key])
        except (KeyError, ValueError):
            raise ScriptError(f"{key} must be an integer", event.line_number) from None
        if value < minimum:
            raise ScriptError(f"{key} must be at least {minimum}", event.line_number)
        return value


def parse_latency(text: str, line_number: Optional[int] = None) -> Tuple[int, int]:
    try:
        if "-" in text:
            low, high = (int(part) for part in text.split("-", 1))
        else:
            low = high = int(text)
    except ValueError:
        raise ScriptError(f"bad latency {text!r}", line_number) from None
    if low < 1 or high < low:
        raise ScriptError(f"latency range {text!r} must satisfy 1 <= low <= high", line_number)
    return low, high


def build_sim_config(script: ScenarioScript, seed: int) -> SimConfig:
    """Fold `config` and `agent` lines into a SimConfig"""
    settings: Dict[str, str] = {}
    line_of: Dict[str, int] = {}
    shares: Dict[str, float] = {}
    for event in script.events:
        if event.action == "config":
            settings.update(event.args)
            line_of.update({key: event.line_number for key in event.args})
        elif event.action == "agent":
            behavior = AgentBehavior(event.args["behavior"].upper())
            share = event.args.get("hash", "0")
            try:
                shares[event.actor] = float(share)
            except ValueError:
                raise ScriptError(f"bad hash share {share!r}", event.line_number) from None
            if shares[event.actor] < 0 or (shares[event.actor] > 0 and not behavior.mines):
                raise ScriptError(f"{event.actor} cannot hold hash share {share}", event.line_number)

    try:
        node_count = int(settings.get("node_count", 5))
        block_rate = float(settings.get("block_rate", 0.1))
        horizon = int(settings.get("horizon", 200))
    except ValueError as e:
        raise ScriptError(f"bad config value: {e}") from None
    latency = parse_latency(settings.get("latency", "1"), line_of.get("latency"))
    if not 0 < block_rate <= 1:
        raise ScriptError("block_rate must be in (0, 1]", line_of.get("block_rate"))
    if horizon < 1:
        raise ScriptError("horizon must be positive", line_of.get("horizon"))

    if not shares:
        # no agents declared: node_count equal-share honest miners
        shares = {f"node{i}": 1.0 / node_count for i in range(node_count)}
    for event in script.events:
        if event.tick is not None and event.tick > horizon:
            raise ScriptError(f"event at tick {event.tick} is beyond the horizon {horizon}", event.line_number)

    return SimConfig(
        seed=seed,
        scenario=script,
        node_count=len(shares),
        latency=latency,
        hash_shares=shares,
        block_rate=block_rate,
        horizon=horizon,
        root=settings.get("root", sorted(shares)[0]),
    )
