"""
Command Line Interface for Rolechain
Runs scenarios, inspects chain files, emits the hierarchy as DOT and prints
validation verdicts
"""

import logging
import os
import sys
from datetime import datetime
from typing import Dict, List, NoReturn, Optional

import click
import pytz
from jinja2 import Template

from analytics_service import ChainAnalyticsService
from app import NodeConfig, configure_logging
from consensus_service import ChainState, block_hash, load_chain, read_chain_file, write_chain_file
from errors import RolechainError, ScriptError, ValidationError, WireFormatError
from hierarchy_service import export_dot
from models import LedgerState, PolicyParamId
from policy_service import bootstrap_check, effective
from simulation_service import run_scenario_file
from transaction_service import deserialize_tx
from validation_service import ValidationService

logger = logging.getLogger(__name__)

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates", "reports")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _load_template(name: str) -> Template:
    with open(os.path.join(TEMPLATE_DIR, name), encoding="utf-8") as handle:
        return Template(handle.read(), trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)


def _fail(message: str, code: int) -> NoReturn:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _node_config() -> NodeConfig:
    try:
        return NodeConfig.from_env()
    except ValueError as e:
        raise click.UsageError(str(e))


def _open_chain(path: str) -> ChainState:
    """Read and re-validate a chain file; corrupt files exit 2, invalid chains exit 1"""
    config = _node_config()
    try:
        blocks = read_chain_file(path)
    except WireFormatError as e:
        _fail(f"{path} is not a readable chain file: {e.code}: {e}", EXIT_USAGE)
    try:
        return load_chain(blocks, config.subsidy, config.y_min, config.bootstrap_window)
    except ValidationError as e:
        _fail(f"{path} holds an invalid chain: {e.code}: {e}", EXIT_FAILURE)
    except RolechainError as e:
        logger.error(f"Unexpected failure loading {path}: {e.code}: {e}")
        _fail(f"{path}: {e.code}: {e}", EXIT_USAGE)


def _policy_rows(state: LedgerState) -> List[Dict]:
    rows = []
    for param in PolicyParamId:
        entry = state.policy.entries.get(param)
        rows.append({
            "name": param.name,
            "value": effective(param, state.policy),
            "explicit": entry is not None,
            "permanent": entry.permanent if entry else False,
            "depth": entry.setter_depth if entry else None,
            "height": entry.set_height if entry else None,
        })
    return rows


def _role_rows(state: LedgerState) -> List[Dict]:
    rows = []
    for key in sorted(state.role_index):
        entry = state.role_index[key]
        parent = state.hierarchy.parent.get(key)
        rows.append({
            "account": key.label,
            "roles": entry.roles.letters() or "-",
            "locked": entry.locked,
            "parent": parent.label if parent is not None else "none",
        })
    return rows


@click.group()
@click.option("--log-level", default=None, help="Logging level (default: ROLECHAIN_LOG_LEVEL or WARNING)")
def cli(log_level: Optional[str]):
    """Rolechain: a managed cryptocurrency node and network simulator"""
    configure_logging(log_level)


@cli.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True, help="Simulation seed; ROLECHAIN_SEED overrides it")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), help="Write the full trace here")
@click.option("--dot", "dot_path", type=click.Path(dir_okay=False), help="Write the final hierarchy as DOT here")
@click.option("--chain", "chain_path", type=click.Path(dir_okay=False), help="Write the root node's best chain here")
@click.option("--timestamps", is_flag=True, help="Stamp reports with the current UTC time")
def run(scenario: str, seed: int, trace_path: Optional[str], dot_path: Optional[str], chain_path: Optional[str],
        timestamps: bool):
    """Run a scenario file through the network simulator"""
    config = _node_config()
    if config.seed is not None:
        seed = config.seed
    try:
        simulator = run_scenario_file(scenario, seed, config)
    except ScriptError as e:
        _fail(f"{scenario}: {e}", EXIT_USAGE)
    except RolechainError as e:
        logger.error(f"Scenario {scenario} aborted: {e.code}: {e}")
        _fail(f"{scenario}: {e.code}: {e}", EXIT_FAILURE)
    logger.info(f"Scenario {simulator.config.scenario.name} finished at tick {simulator.tick}")

    trace = simulator.trace
    generated_at = datetime.now(pytz.utc).isoformat() if timestamps else None
    if trace_path:
        header = f"# generated {generated_at}\n" if generated_at else ""
        _write_text(trace_path, header + trace.to_text())
    if dot_path:
        _write_text(dot_path, simulator.dot_source())
    if chain_path:
        write_chain_file(chain_path, simulator.best_chain())

    assertions = [event.to_line() for event in trace.events if event.event == "assert"]
    click.echo(_load_template("run_summary.txt").render(
        generated_at=generated_at,
        name=simulator.config.scenario.name,
        seed=seed,
        assertions=assertions,
        summaries=trace.summaries,
        failures=trace.failures,
        passed=trace.passed,
        assertion_count=len(assertions),
    ), nl=False)
    sys.exit(EXIT_OK if trace.passed else EXIT_FAILURE)


@cli.command()
@click.argument("chain_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--height", type=int, default=None, help="Report the state at this height of the best chain")
def inspect(chain_file: str, height: Optional[int]):
    """Print block summaries, management windows, the role index and policy"""
    chain = _open_chain(chain_file)
    blocks = chain.best_chain()
    if height is not None:
        if not 0 <= height < len(blocks):
            raise click.BadParameter(f"height must be between 0 and {len(blocks) - 1}", param_hint="--height")
        blocks = blocks[: height + 1]
    state = chain.state_at(block_hash(blocks[-1]))

    analytics = ChainAnalyticsService()
    click.echo(_load_template("inspect.txt").render(
        tip_hash=chain.tip.hex(),
        tip_height=chain.height,
        height=height,
        blocks=analytics.block_summaries(blocks),
        windows=analytics.window_report(blocks),
        roles=_role_rows(state),
        params=_policy_rows(state),
    ), nl=False)


@cli.command()
@click.argument("chain_file", type=click.Path(exists=True, dir_okay=False))
def dot(chain_file: str):
    """Print the hierarchy at the tip as Graphviz DOT"""
    state = _open_chain(chain_file).tip_state
    click.echo(export_dot(state.hierarchy, state.role_index), nl=False)


@cli.command(name="validate-tx")
@click.argument("chain_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("tx_hex")
def validate_tx(chain_file: str, tx_hex: str):
    """Validate one hex-encoded transaction against the tip of a chain"""
    chain = _open_chain(chain_file)
    try:
        tx = deserialize_tx(bytes.fromhex(tx_hex))
    except ValueError:
        _fail("transaction is not valid hex", EXIT_USAGE)
    except WireFormatError as e:
        _fail(f"{e.code}: {e}", EXIT_USAGE)

    state = chain.tip_state.evolve(height=chain.height + 1)
    if tx.is_coinbase or tx.is_genesis:
        click.echo("invalid BadCoinbase: null-input transactions only appear inside blocks")
        sys.exit(EXIT_FAILURE)
    ok, message = ValidationService.check_transaction(tx, state)
    click.echo(f"valid {message}" if ok else f"invalid {message}")
    sys.exit(EXIT_OK if ok else EXIT_FAILURE)


@cli.command()
@click.argument("chain_file", type=click.Path(exists=True, dir_okay=False))
def params(chain_file: str):
    """Print effective policy parameters with setter depth and permanence"""
    chain = _open_chain(chain_file)
    state = chain.tip_state
    unset = bootstrap_check(state.policy, max(chain.height, state.policy.bootstrap_window))
    click.echo(_load_template("params.txt").render(
        params=_policy_rows(state),
        unset=[param.name for param in unset],
        window=state.policy.bootstrap_window,
    ), nl=False)
