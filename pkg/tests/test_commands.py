import os

import pytest
from click.testing import CliRunner

from app import NodeConfig
from commands import cli
from consensus_service import load_chain, read_chain_file
from ledger_service import coins_of
from simulation_service import SCENARIO_DIR
from transaction_service import KeyPair, build_transfer, make_input, serialize_tx, sign_transaction

REPLAY = os.path.join(SCENARIO_DIR, "replay.scn")
EXAMPLE_HIERARCHY = os.path.join(SCENARIO_DIR, "fig4.scn")

ENV_KEYS = ("ROLECHAIN_SEED", "ROLECHAIN_Y_MIN", "ROLECHAIN_BOOTSTRAP_WINDOW", "ROLECHAIN_SUBSIDY",
            "ROLECHAIN_TARGET_BITS", "ROLECHAIN_LOG_LEVEL")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)


@pytest.fixture(scope="module")
def replay_run(tmp_path_factory):
    """One replay scenario run with every output file written"""
    out = tmp_path_factory.mktemp("replay")
    paths = {name: str(out / name) for name in ("chain.bin", "hierarchy.dot", "trace.txt")}
    result = CliRunner().invoke(cli, [
        "run", REPLAY, "--chain", paths["chain.bin"], "--dot", paths["hierarchy.dot"],
        "--trace", paths["trace.txt"],
    ], env={key: None for key in ENV_KEYS})
    return result, paths


def _miner_payment(chain_path, sign=True):
    config = NodeConfig.from_env()
    chain = load_chain(read_chain_file(chain_path), config.subsidy, config.y_min, config.bootstrap_window)
    for name in ("m1", "m2", "m3"):
        keypair = KeyPair.from_label(name)
        coins = coins_of(chain.tip_state, keypair.account)
        if coins:
            coin = coins[0]
            tx = build_transfer([make_input(coin.outpoint, keypair.account)],
                                [(KeyPair.from_label("node1").account, coin.kind.amount)])
            return sign_transaction(tx, [keypair] if sign else [])
    raise AssertionError("no miner holds a coin")


class TestRun:
    def test_replay_scenario_passes(self, replay_run):
        result, paths = replay_run
        assert result.exit_code == 0, result.output
        assert "passed: " in result.output
        for path in paths.values():
            assert os.path.getsize(path) > 0

    def test_outputs(self, replay_run):
        _, paths = replay_run
        with open(paths["hierarchy.dot"], encoding="utf-8") as handle:
            assert handle.read().startswith("digraph hierarchy {")
        with open(paths["trace.txt"], encoding="utf-8") as handle:
            lines = handle.read().splitlines()
        assert any(" | replay | " in line for line in lines)
        assert not any(line.startswith("FAIL") for line in lines)

    def test_example_hierarchy_writes_its_graph(self, tmp_path):
        out = tmp_path / "out.dot"
        result = CliRunner().invoke(cli, ["run", EXAMPLE_HIERARCHY, "--dot", str(out)],
                                    env={key: None for key in ENV_KEYS})
        assert result.exit_code == 0, result.output
        dot = out.read_text(encoding="utf-8")
        assert "Node 0 (M, C, L, U, A)" in dot
        assert "Node 6 (U, D)" in dot
        assert "Node 9 ()" in dot

    def test_failing_assertion_exits_one(self, tmp_path):
        script = tmp_path / "short.scn"
        script.write_text("0 | sim | config | node_count=2 | horizon=5\nend | sim | assert | height | min=1000\n")
        result = CliRunner().invoke(cli, ["run", str(script)])
        assert result.exit_code == 1
        assert "failed: " in result.output

    def test_bad_script_exits_two(self, tmp_path):
        script = tmp_path / "bad.scn"
        script.write_text("0 | sim | teleport\n")
        result = CliRunner().invoke(cli, ["run", str(script)])
        assert result.exit_code == 2
        assert "unknown action" in result.output

    def test_missing_scenario_exits_two(self, tmp_path):
        result = CliRunner().invoke(cli, ["run", str(tmp_path / "absent.scn")])
        assert result.exit_code == 2

    def test_seed_from_environment(self, tmp_path):
        script = tmp_path / "tiny.scn"
        script.write_text("0 | sim | config | node_count=2 | horizon=5\n")
        result = CliRunner().invoke(cli, ["run", str(script), "--seed", "1"], env={"ROLECHAIN_SEED": "42"})
        assert result.exit_code == 0, result.output
        assert "seed 42" in result.output


class TestChainCommands:
    def test_inspect(self, replay_run):
        _, paths = replay_run
        result = CliRunner().invoke(cli, ["inspect", paths["chain.bin"]])
        assert result.exit_code == 0, result.output
        assert "MINING_MODE" in result.output

    def test_inspect_height_out_of_range(self, replay_run):
        _, paths = replay_run
        result = CliRunner().invoke(cli, ["inspect", paths["chain.bin"], "--height", "100000"])
        assert result.exit_code == 2

    def test_params(self, replay_run):
        _, paths = replay_run
        result = CliRunner().invoke(cli, ["params", paths["chain.bin"]])
        assert result.exit_code == 0, result.output
        assert "MGMT_INTERVAL_Y" in result.output
        assert "144" in result.output

    def test_dot(self, replay_run):
        _, paths = replay_run
        result = CliRunner().invoke(cli, ["dot", paths["chain.bin"]])
        assert result.exit_code == 0, result.output
        assert result.output.startswith("digraph hierarchy {")

    def test_truncated_chain_exits_two(self, replay_run, tmp_path):
        _, paths = replay_run
        with open(paths["chain.bin"], "rb") as handle:
            data = handle.read()
        broken = tmp_path / "broken.bin"
        broken.write_bytes(data[:-7])
        result = CliRunner().invoke(cli, ["inspect", str(broken)])
        assert result.exit_code == 2

    def test_empty_chain_exits_two(self, tmp_path):
        empty = tmp_path / "empty.bin"
        empty.write_bytes(b"")
        assert CliRunner().invoke(cli, ["dot", str(empty)]).exit_code == 2


class TestValidateTx:
    def test_valid_payment(self, replay_run):
        _, paths = replay_run
        tx = _miner_payment(paths["chain.bin"])
        result = CliRunner().invoke(cli, ["validate-tx", paths["chain.bin"], serialize_tx(tx).hex()])
        assert result.exit_code == 0, result.output
        assert result.output.strip() == "valid fee=0"

    def test_unsigned_payment(self, replay_run):
        _, paths = replay_run
        tx = _miner_payment(paths["chain.bin"], sign=False)
        result = CliRunner().invoke(cli, ["validate-tx", paths["chain.bin"], serialize_tx(tx).hex()])
        assert result.exit_code == 1
        assert result.output.startswith("invalid BadSignature")

    @pytest.mark.parametrize("tx_hex", ["zz", "01"])
    def test_unreadable_transaction(self, replay_run, tx_hex):
        _, paths = replay_run
        result = CliRunner().invoke(cli, ["validate-tx", paths["chain.bin"], tx_hex])
        assert result.exit_code == 2
