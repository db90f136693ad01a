from dataclasses import replace

import pytest

from consensus_service import (
    ChainState, block_hash, dependent_window_check, genesis_transaction, load_chain, make_genesis, meets_target,
    merkle_root, mine_block, read_chain_file, serialize_header, validate_block, write_chain_file,
)
from errors import (
    BadCoinbase, BadMerkle, BadPoW, BadPrevHash, BadSignature, BootstrapIncomplete, CoinbaseOverpay, DoubleSpend,
    MalformedTransaction, OrphanParent, TruncatedInput, WindowViolation, WireFormatError,
)
from ledger_service import balance, coins_of, role_of, total_coin
from models import (
    NULL_TXID, SIGNATURE_SIZE, UINT64_MAX, Block, BlockHeader, PolicyParamId, PolicyPayload, RolePayload, RoleSet,
    Transaction, TxMode, TxOutput, WindowSample,
)
from transaction_service import (
    KeyPair, build_coinbase, build_policy_change, build_role_change, build_transfer, double_sha256, make_input,
    serialize_tx, sign_transaction, tx_digest, tx_id,
)

MINER = KeyPair.from_label("miner")
OTHER = KeyPair.from_label("other-miner")


def _mine_raw(transactions, parent, config) -> Block:
    """Search a nonce for arbitrary transactions, skipping every content rule"""
    root = merkle_root([tx_id(tx) for tx in transactions])
    nonce = 0
    while True:
        header = BlockHeader(parent.block_hash, root, parent.height + 1, nonce, config.target)
        if meets_target(header):
            return Block(header, tuple(transactions))
        nonce += 1


def _policy_tx(state, root_key, **values):
    key = root_key.account
    payloads = [PolicyPayload(int(PolicyParamId[name]), False, value) for name, value in values.items()]
    tx = build_policy_change(key, state.role_index[key].live_outpoint, role_of(state, key), payloads)
    return sign_transaction(tx, [root_key])


def _refresh_tx(state, root_key):
    key = root_key.account
    tx = build_role_change(key, [state.role_index[key].live_outpoint], [(key, role_of(state, key))])
    return sign_transaction(tx, [root_key])


def _grant_tx(state, root_key, target, letters):
    key = root_key.account
    tx = build_role_change(key, [state.role_index[key].live_outpoint], [
        (key, role_of(state, key)), (target, RolePayload(RoleSet.from_letters(letters), False)),
    ])
    return sign_transaction(tx, [root_key])


def _extend(chain, count, template_for=lambda state: [], reward=MINER):
    for _ in range(count):
        state = chain.tip_state
        block = mine_block(template_for(state), state, reward.account, chain.config, seed=state.height)
        chain.connect_block(block)
    return chain


class TestStructure:
    def test_header_is_108_bytes(self):
        header = BlockHeader(NULL_TXID, NULL_TXID, 1, UINT64_MAX, 1 << 252)
        assert len(serialize_header(header)) == 108

    def test_merkle_root(self):
        a, b, c = (bytes([i]) * 32 for i in (1, 2, 3))
        assert merkle_root([]) == NULL_TXID
        assert merkle_root([a]) == a
        assert merkle_root([a, b]) == double_sha256(a + b)
        assert merkle_root([a, b, c]) == double_sha256(double_sha256(a + b) + double_sha256(c + c))

    def test_genesis_grants_every_role_to_the_root(self, root_key, chain_config):
        block, state = make_genesis(root_key.account, chain_config)
        assert block.height == 0
        assert state.role_index[root_key.account].roles == RoleSet.all_roles()
        assert state.hierarchy.root == root_key.account
        assert state.block_hash == block_hash(block)
        assert total_coin(state) == 0

    def test_genesis_must_match_the_configuration(self, root_key, chain_config):
        foreign, _ = make_genesis(root_key.account, replace(chain_config, target=1 << 200))
        with pytest.raises(BadCoinbase):
            ChainState(chain_config, foreign)

    def test_genesis_transaction_digest_is_pinned(self, root_key):
        assert root_key.account.pubkey.hex() == "20f0c67369f81dacdfddc5f43790a58b17a0029d7f781e42831657df3a615db3"
        tx = genesis_transaction(root_key.account)
        assert len(serialize_tx(tx)) == 4 + 1 + 133 + 1 + 2 * 40 + 4
        assert tx_digest(tx).hex() == "02c0e0b2ea32b77a82745cf2ba73a17982d2364390bf82a141e58d4a4156f48a"

    def test_genesis_signature_bytes_cannot_vary(self, root_key, chain_config):
        genesis, _ = make_genesis(root_key.account, chain_config)
        tx = genesis.transactions[0]
        stuffed = replace(tx, inputs=(replace(tx.inputs[0], signature=bytes([7]) * SIGNATURE_SIZE),))
        forged = replace(genesis, transactions=(stuffed,))
        assert block_hash(forged) == block_hash(genesis)
        with pytest.raises(BadCoinbase):
            ChainState(chain_config, forged)


class TestMining:
    def test_mined_block_connects_and_pays_the_subsidy(self, chain_config):
        chain = ChainState(chain_config)
        block = mine_block([], chain.tip_state, MINER.account, chain_config, seed=1)
        assert chain.connect_block(block)
        assert chain.height == 1
        assert balance(chain.tip_state, MINER.account) == chain_config.subsidy
        assert coins_of(chain.tip_state, MINER.account)[0].kind.coinbase_origin

    def test_same_seed_same_block(self, chain_config):
        _, genesis = make_genesis(chain_config.root_key, chain_config)
        first = mine_block([], genesis, MINER.account, chain_config, seed=7)
        assert mine_block([], genesis, MINER.account, chain_config, seed=7) == first
        assert mine_block([], genesis, MINER.account, chain_config, seed=8) != first

    def test_fees_go_to_the_miner(self, root_key, chain_config):
        chain = _extend(ChainState(chain_config), 1, reward=root_key)
        reward = coins_of(chain.tip_state, root_key.account)[0]
        payment = sign_transaction(build_transfer(
            [make_input(reward.outpoint, root_key.account)], [(MINER.account, reward.kind.amount - 10)]
        ), [root_key])
        block = mine_block([payment], chain.tip_state, OTHER.account, chain_config, seed=3)
        assert block.transactions[0].outputs[0].nvalue == chain_config.subsidy + 10
        chain.connect_block(block)
        assert total_coin(chain.tip_state) == 2 * chain_config.subsidy


class TestBlockRules:
    def test_wrong_parent(self, chain_config):
        chain = _extend(ChainState(chain_config), 1)
        with pytest.raises(BadPrevHash):
            validate_block(chain.best_chain()[1], chain.tip_state, chain_config)

    def test_header_above_target(self, chain_config):
        _, genesis = make_genesis(chain_config.root_key, chain_config)
        block = mine_block([], genesis, MINER.account, chain_config, seed=1)
        header = block.header
        while meets_target(header):
            header = replace(header, nonce=(header.nonce + 1) & UINT64_MAX)
        with pytest.raises(BadPoW):
            validate_block(replace(block, header=header), genesis, chain_config)

    def test_target_must_match_the_chain(self, chain_config):
        _, genesis = make_genesis(chain_config.root_key, chain_config)
        easy = replace(chain_config, target=1 << 255)
        block = mine_block([], genesis, MINER.account, easy, seed=1)
        with pytest.raises(BadPoW):
            validate_block(block, genesis, chain_config)

    def test_transactions_must_match_the_merkle_root(self, chain_config):
        _, genesis = make_genesis(chain_config.root_key, chain_config)
        block = mine_block([], genesis, MINER.account, chain_config, seed=1)
        tampered = replace(block, transactions=(build_coinbase(OTHER.account, 1, 1),))
        with pytest.raises(BadMerkle):
            validate_block(tampered, genesis, chain_config)

    def test_coinbase_overpay(self, chain_config):
        _, genesis = make_genesis(chain_config.root_key, chain_config)
        block = mine_block([], genesis, MINER.account, chain_config, seed=1,
                           coinbase_amount=chain_config.subsidy + 1)
        with pytest.raises(CoinbaseOverpay):
            validate_block(block, genesis, chain_config)

    @pytest.mark.parametrize("transactions", [
        lambda: [build_coinbase(MINER.account, 10, 7)],
        lambda: [build_coinbase(MINER.account, 10, 1), build_coinbase(OTHER.account, 10, 1)],
        lambda: [],
    ])
    def test_coinbase_structure(self, chain_config, transactions):
        _, genesis = make_genesis(chain_config.root_key, chain_config)
        with pytest.raises(BadCoinbase):
            validate_block(_mine_raw(transactions(), genesis, chain_config), genesis, chain_config)

    @pytest.mark.parametrize("field, value", [
        ("signature", b"\x01" * SIGNATURE_SIZE),
        ("signer", MINER.account),
        ("law_override", True),
    ])
    def test_coinbase_input_carries_no_authorization(self, chain_config, field, value):
        _, genesis = make_genesis(chain_config.root_key, chain_config)
        coinbase = build_coinbase(MINER.account, 10, 1)
        altered = replace(coinbase, inputs=(replace(coinbase.inputs[0], **{field: value}),))
        with pytest.raises(BadCoinbase):
            validate_block(_mine_raw([altered], genesis, chain_config), genesis, chain_config)

    def test_transfer_without_inputs_invalidates_the_block(self, chain_config):
        _, genesis = make_genesis(chain_config.root_key, chain_config)
        empty = Transaction(version=TxMode.COIN_TRANSFER, inputs=(), outputs=(TxOutput(0, OTHER.account),))
        block = _mine_raw([build_coinbase(MINER.account, 1, 1), empty, empty], genesis, chain_config)
        with pytest.raises(MalformedTransaction):
            validate_block(block, genesis, chain_config)

    def test_same_transaction_twice_in_a_block(self, root_key, chain_config):
        chain = _extend(ChainState(chain_config), 1, reward=root_key)
        reward = coins_of(chain.tip_state, root_key.account)[0]
        payment = sign_transaction(build_transfer(
            [make_input(reward.outpoint, root_key.account)], [(MINER.account, reward.kind.amount)]
        ), [root_key])
        block = _mine_raw([build_coinbase(MINER.account, 1, 2), payment, payment], chain.tip_state, chain_config)
        with pytest.raises(DoubleSpend):
            chain.connect_block(block)
        assert chain.height == 1

    def test_invalid_transaction_invalidates_the_block(self, root_key, chain_config):
        chain = _extend(ChainState(chain_config), 1, reward=root_key)
        reward = coins_of(chain.tip_state, root_key.account)[0]
        unsigned = build_transfer([make_input(reward.outpoint, root_key.account)], [(MINER.account, 1)])
        block = _mine_raw([build_coinbase(MINER.account, 1, 2), unsigned], chain.tip_state, chain_config)
        with pytest.raises(BadSignature):
            chain.connect_block(block)
        assert chain.height == 1


class TestBootstrap:
    def test_missing_policy_stops_the_chain_at_the_window(self, chain_config):
        config = replace(chain_config, bootstrap_window=3)
        chain = _extend(ChainState(config), 2)
        block = mine_block([], chain.tip_state, MINER.account, config, seed=3)
        with pytest.raises(BootstrapIncomplete):
            chain.connect_block(block)

    def test_complete_policy_before_the_window(self, root_key, chain_config):
        config = replace(chain_config, bootstrap_window=3)
        chain = ChainState(config)
        policy = _policy_tx(chain.tip_state, root_key, MINING_MODE=0, MGMT_TX_COUNT_X=0, MGMT_INTERVAL_Y=4,
                            MAX_MINT_PER_TX=0)
        chain.connect_block(mine_block([policy], chain.tip_state, MINER.account, config, seed=1))
        _extend(chain, 5)
        assert chain.height == 6

    def test_policy_set_in_the_window_block_itself_is_too_late(self, root_key, chain_config):
        config = replace(chain_config, bootstrap_window=3)
        chain = _extend(ChainState(config), 2)
        policy = _policy_tx(chain.tip_state, root_key, MINING_MODE=0, MGMT_TX_COUNT_X=0, MGMT_INTERVAL_Y=4,
                            MAX_MINT_PER_TX=0)
        with pytest.raises(BootstrapIncomplete):
            chain.connect_block(mine_block([policy], chain.tip_state, MINER.account, config, seed=3))


def _samples(counts, x, y, mode=1, independent_until=0):
    return [
        WindowSample(height=h, mgmt_count=count, mining_mode=0 if h <= independent_until else mode, x=x, y=y)
        for h, count in enumerate(counts, start=1)
    ]


class TestDependentWindows:
    def test_short_window_is_rejected_at_its_last_block(self):
        samples = _samples([0, 0, 0, 0], x=1, y=4)
        for end in range(1, 4):
            dependent_window_check(samples[:end])
        with pytest.raises(WindowViolation) as excinfo:
            dependent_window_check(samples)
        assert (excinfo.value.window_index, excinfo.value.found, excinfo.value.required) == (1, 0, 1)

    def test_one_management_transaction_anywhere_in_the_window(self):
        dependent_window_check(_samples([0, 0, 1, 0], x=1, y=4))

    def test_second_of_three_windows_is_short(self):
        # window sums 2, 1, 3 against x = 2
        samples = _samples([1, 0, 1, 0, 0, 1, 0, 0, 3, 0, 0, 0], x=2, y=4)
        dependent_window_check(samples[:4])
        with pytest.raises(WindowViolation) as excinfo:
            dependent_window_check(samples[:8])
        assert excinfo.value.window_index == 2
        assert excinfo.value.found == 1
        dependent_window_check(samples[:12])

    def test_window_started_in_independent_mode_is_not_enforced(self):
        dependent_window_check(_samples([0, 0, 0, 0], x=1, y=4, independent_until=1))

    def test_interval_change_inside_an_open_window(self):
        # 17..32 opens under y = 16 and keeps it after y becomes 20 at block 21
        counts = [0] * 60
        counts[0], counts[8], counts[19] = 1, 1, 1
        samples = [
            WindowSample(height=h, mgmt_count=counts[h - 1], mining_mode=1, x=2, y=16 if h <= 20 else 20)
            for h in range(1, 61)
        ]
        dependent_window_check(samples[:16])
        for end in range(17, 32):
            dependent_window_check(samples[:end])
        with pytest.raises(WindowViolation) as excinfo:
            dependent_window_check(samples[:32])
        assert (excinfo.value.window_index, excinfo.value.found, excinfo.value.required) == (2, 1, 2)

        # the next window opens on the new grid at 41 and closes at 60
        for end in range(33, 60):
            dependent_window_check(samples[:end])
        with pytest.raises(WindowViolation) as excinfo:
            dependent_window_check(samples[:60])
        assert excinfo.value.window_index == 3

    def test_block_completing_a_short_window(self, root_key, chain_config):
        chain = ChainState(chain_config)
        policy = _policy_tx(chain.tip_state, root_key, MINING_MODE=1, MGMT_TX_COUNT_X=1, MGMT_INTERVAL_Y=4,
                            MAX_MINT_PER_TX=0)
        chain.connect_block(mine_block([policy], chain.tip_state, MINER.account, chain_config, seed=1))
        # blocks 1-4 open under the independent mode; blocks 5-8 form the first enforced window
        _extend(chain, 6)
        assert chain.height == 7
        empty = mine_block([], chain.tip_state, MINER.account, chain_config, seed=8)
        with pytest.raises(WindowViolation):
            chain.connect_block(empty)
        refresh = _refresh_tx(chain.tip_state, root_key)
        assert chain.connect_block(mine_block([refresh], chain.tip_state, MINER.account, chain_config, seed=8))
        assert chain.tip_state.windows[-1].mgmt_count == 1


class TestForkChoice:
    def test_first_seen_wins_ties_and_longer_branch_reorgs(self, chain_config):
        chain = ChainState(chain_config)
        genesis = chain.tip_state
        first = mine_block([], genesis, MINER.account, chain_config, seed=1)
        second = mine_block([], genesis, OTHER.account, chain_config, seed=2)
        assert chain.connect_block(first)
        assert not chain.connect_block(second)
        assert chain.tip == block_hash(first)

        longer = mine_block([], chain.state_at(block_hash(second)), OTHER.account, chain_config, seed=3)
        assert chain.connect_block(longer)
        assert [block_hash(block) for block in chain.best_chain()[1:]] == [block_hash(second), block_hash(longer)]
        assert chain.contains_tx(tx_id(second.transactions[0]))
        assert not chain.contains_tx(tx_id(first.transactions[0]))
        assert balance(chain.tip_state, MINER.account) == 0

    def test_longer_branch_with_a_short_window_is_not_adopted(self, root_key, chain_config):
        chain = ChainState(chain_config)
        policy = _policy_tx(chain.tip_state, root_key, MINING_MODE=1, MGMT_TX_COUNT_X=1, MGMT_INTERVAL_Y=4,
                            MAX_MINT_PER_TX=0)
        chain.connect_block(mine_block([policy], chain.tip_state, MINER.account, chain_config, seed=1))
        _extend(chain, 6)
        refresh = _refresh_tx(chain.tip_state, root_key)
        assert chain.connect_block(mine_block([refresh], chain.tip_state, MINER.account, chain_config, seed=8))
        tip = chain.tip

        fork_base = chain.state_at(block_hash(chain.best_chain()[6]))
        seven = mine_block([], fork_base, OTHER.account, chain_config, seed=70)
        assert not chain.connect_block(seven)
        short = mine_block([], chain.state_at(block_hash(seven)), OTHER.account, chain_config, seed=80)
        with pytest.raises(WindowViolation):
            chain.connect_block(short)
        assert not chain.has_block(block_hash(short))

        stand_in = chain.state_at(block_hash(seven)).evolve(block_hash=block_hash(short), height=8)
        nine = _mine_raw([build_coinbase(OTHER.account, 1, 9)], stand_in, chain_config)
        with pytest.raises(OrphanParent):
            chain.connect_block(nine)
        assert chain.tip == tip
        assert chain.height == 8

    def test_reorg_state_matches_a_replay_of_the_new_branch(self, root_key, chain_config):
        chain = _extend(ChainState(chain_config), 1, reward=root_key)
        fork_base = chain.tip_state
        reward = coins_of(fork_base, root_key.account)[0]

        def pay(to):
            return sign_transaction(build_transfer(
                [make_input(reward.outpoint, root_key.account)], [(to.account, reward.kind.amount)]
            ), [root_key])

        chain.connect_block(mine_block([pay(MINER)], fork_base, MINER.account, chain_config, seed=2))
        assert balance(chain.tip_state, MINER.account) == reward.kind.amount + chain_config.subsidy

        two = mine_block([_grant_tx(fork_base, root_key, OTHER.account, "U")], fork_base, OTHER.account,
                         chain_config, seed=20)
        assert not chain.connect_block(two)
        three = mine_block([pay(OTHER)], chain.state_at(block_hash(two)), OTHER.account, chain_config, seed=30)
        assert chain.connect_block(three)

        assert balance(chain.tip_state, MINER.account) == 0
        assert role_of(chain.tip_state, OTHER.account).roles.letters() == "U"
        replayed = load_chain(chain.best_chain(), chain_config.subsidy, chain_config.y_min,
                              chain_config.bootstrap_window)
        assert replayed.tip == chain.tip
        assert replayed.tip_state == chain.tip_state

    def test_known_block_is_ignored(self, chain_config):
        chain = ChainState(chain_config)
        block = mine_block([], chain.tip_state, MINER.account, chain_config, seed=1)
        assert chain.connect_block(block)
        assert not chain.connect_block(block)
        assert chain.has_block(block_hash(block))

    def test_unknown_parent(self, chain_config):
        source = _extend(ChainState(chain_config), 2)
        with pytest.raises(OrphanParent):
            ChainState(chain_config).connect_block(source.best_chain()[2])


class TestChainFiles:
    def test_written_chain_reloads_and_revalidates(self, tmp_path, root_key, chain_config):
        chain = ChainState(chain_config)
        policy = _policy_tx(chain.tip_state, root_key, MINING_MODE=0, MGMT_TX_COUNT_X=0, MGMT_INTERVAL_Y=4,
                            MAX_MINT_PER_TX=0)
        chain.connect_block(mine_block([policy], chain.tip_state, MINER.account, chain_config, seed=1))
        _extend(chain, 3)
        path = tmp_path / "chain.bin"
        write_chain_file(str(path), chain.best_chain())

        blocks = read_chain_file(str(path))
        assert blocks == chain.best_chain()
        loaded = load_chain(blocks, chain_config.subsidy, chain_config.y_min, chain_config.bootstrap_window)
        assert loaded.tip == chain.tip
        assert loaded.tip_state.policy == chain.tip_state.policy

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        with pytest.raises(TruncatedInput):
            read_chain_file(str(path))

    def test_truncated_file(self, tmp_path, chain_config):
        chain = _extend(ChainState(chain_config), 2)
        path = tmp_path / "chain.bin"
        write_chain_file(str(path), chain.best_chain())
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(WireFormatError):
            read_chain_file(str(path))
