"""
Policy Service for Rolechain
Policy parameters with permanence and setter depth, permissive defaults,
the bootstrap requirement and the y-minimum floor
"""

import logging
from typing import Dict, List, Sequence

from errors import (
    AuthorityTooDeep, DuplicateParam, IntervalBelowMinimum, InvalidParamValue, PermanentViolation,
    UnknownParam,
)
from models import (
    MINING_DEPENDENT, MINING_INDEPENDENT, UINT32_MAX, PolicyEntry, PolicyParamId, PolicyPayload,
    PolicyState,
)

logger = logging.getLogger(__name__)

# Most permissive value of every parameter, in force until it is set on-chain
PERMISSIVE_DEFAULTS: Dict[PolicyParamId, int] = {
    PolicyParamId.MINING_MODE: MINING_INDEPENDENT,
    PolicyParamId.MGMT_TX_COUNT_X: 0,
    PolicyParamId.MGMT_INTERVAL_Y: UINT32_MAX,
    PolicyParamId.MAX_MINT_PER_TX: UINT32_MAX,
}


def initial_policy(y_min: int = 16, bootstrap_window: int = 20) -> PolicyState:
    return PolicyState(entries={}, y_min=y_min, bootstrap_window=bootstrap_window)


def param_id_of(param: int) -> PolicyParamId:
    try:
        return PolicyParamId(param)
    except ValueError:
        raise UnknownParam(f"unknown policy parameter id {param}") from None


def param_by_name(name: str) -> PolicyParamId:
    try:
        return PolicyParamId[name.upper()]
    except KeyError:
        raise UnknownParam(f"unknown policy parameter {name!r}") from None


def effective(param_id: int, state: PolicyState) -> int:
    param = param_id_of(param_id)
    entry = state.entries.get(param)
    return entry.value if entry is not None else PERMISSIVE_DEFAULTS[param]


def _check_payload(payload: PolicyPayload, issuer_depth: int, state: PolicyState) -> None:
    param = param_id_of(payload.param_id)
    current = state.entries.get(param)
    if current is not None:
        if current.permanent:
            raise PermanentViolation(f"{param.name} was set permanently")
        if issuer_depth > current.setter_depth:
            raise AuthorityTooDeep(
                f"{param.name} was set at depth {current.setter_depth}; issuer is at depth {issuer_depth}"
            )
    if param == PolicyParamId.MINING_MODE and payload.value not in (MINING_INDEPENDENT, MINING_DEPENDENT):
        raise InvalidParamValue(f"MINING_MODE must be 0 or 1, got {payload.value}")
    if param == PolicyParamId.MGMT_INTERVAL_Y and payload.value < state.y_min:
        raise IntervalBelowMinimum(f"MGMT_INTERVAL_Y {payload.value} is below the minimum {state.y_min}")


def check_policy_tx(payloads: Sequence[PolicyPayload], issuer_depth: int, state: PolicyState) -> None:
    seen = set()
    for payload in payloads:
        if payload.param_id in seen:
            raise DuplicateParam(f"parameter {payload.param_id} appears twice in one transaction")
        seen.add(payload.param_id)
        _check_payload(payload, issuer_depth, state)


def apply_policy_tx(
    payloads: Sequence[PolicyPayload],
    issuer_depth: int,
    state: PolicyState,
    height: int,
) -> PolicyState:
    """All payloads apply together or none do"""
    check_policy_tx(payloads, issuer_depth, state)
    entries = dict(state.entries)
    for payload in payloads:
        param = PolicyParamId(payload.param_id)
        entries[param] = PolicyEntry(
            value=payload.value,
            permanent=payload.permanent,
            setter_depth=issuer_depth,
            set_height=height,
        )
        logger.debug(f"Policy {param.name}={payload.value} permanent={payload.permanent} depth={issuer_depth}")
    return PolicyState(entries=entries, y_min=state.y_min, bootstrap_window=state.bootstrap_window)


def bootstrap_check(state: PolicyState, height: int) -> List[PolicyParamId]:
    """Parameters still unset at or beyond the bootstrap window; empty means ok"""
    if height < state.bootstrap_window:
        return []
    return [param for param in PolicyParamId if param not in state.entries]
