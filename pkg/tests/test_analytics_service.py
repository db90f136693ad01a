import pytest

from analytics_service import ChainAnalyticsService
from consensus_service import ChainState, mine_block
from ledger_service import coins_of, role_of, total_coin
from models import PolicyParamId, PolicyPayload
from transaction_service import KeyPair, build_policy_change, build_role_change, build_transfer, make_input, sign_transaction

MINER = KeyPair.from_label("miner")
OTHER = KeyPair.from_label("other-miner")


def _mine(chain, template=(), reward=MINER):
    state = chain.tip_state
    block = mine_block(list(template), state, reward.account, chain.config, seed=state.height)
    chain.connect_block(block)
    return block


def _policy(chain, root_key, **values):
    key = root_key.account
    state = chain.tip_state
    payloads = [PolicyPayload(int(PolicyParamId[name]), False, value) for name, value in values.items()]
    policy = build_policy_change(key, state.role_index[key].live_outpoint, role_of(state, key), payloads)
    return sign_transaction(policy, [root_key])


def _refresh(chain, root_key):
    key = root_key.account
    state = chain.tip_state
    refresh = build_role_change(key, [state.role_index[key].live_outpoint], [(key, role_of(state, key))])
    return sign_transaction(refresh, [root_key])


@pytest.fixture
def dependent_chain(root_key, chain_config):
    """Dependent mode with x=1, y=4 from block 2; a refresh in block 6 and one in block 12"""
    chain = ChainState(chain_config)
    policy = _policy(chain, root_key, MINING_MODE=1, MGMT_TX_COUNT_X=1, MGMT_INTERVAL_Y=4, MAX_MINT_PER_TX=0)
    _mine(chain, [policy], reward=root_key)
    for height in range(2, 13):
        template = [_refresh(chain, root_key)] if height in (6, 12) else []
        _mine(chain, template, reward=OTHER if height % 3 == 0 else MINER)
    return chain


class TestWindowReport:
    def test_completed_dependent_windows(self, dependent_chain):
        report = ChainAnalyticsService().window_report(dependent_chain.best_chain())
        assert [(w["index"], w["start"], w["end"], w["found"], w["required"], w["ok"]) for w in report] == [
            (2, 5, 8, 1, 1, True),
            (3, 9, 12, 1, 1, True),
        ]

    def test_interval_change_applies_from_the_next_window(self, root_key, chain_config):
        chain = ChainState(chain_config)
        policy = _policy(chain, root_key, MINING_MODE=1, MGMT_TX_COUNT_X=1, MGMT_INTERVAL_Y=4, MAX_MINT_PER_TX=0)
        _mine(chain, [policy], reward=root_key)
        for height in range(2, 17):
            template = []
            if height == 6:
                template.append(_policy(chain, root_key, MGMT_INTERVAL_Y=8))
            elif height == 12:
                template.append(_refresh(chain, root_key))
            _mine(chain, template)
        assert chain.height == 16

        report = ChainAnalyticsService().window_report(chain.best_chain())
        # 5..8 keeps y = 4; the next window opens on the y = 8 grid at 9
        assert [(w["index"], w["start"], w["end"], w["found"], w["required"], w["ok"]) for w in report] == [
            (2, 5, 8, 1, 1, True),
            (2, 9, 16, 1, 1, True),
        ]

    def test_management_counts(self, dependent_chain):
        counts = ChainAnalyticsService().mgmt_counts(dependent_chain.best_chain())
        assert counts[0] == 0
        assert counts[1] == 1
        assert [height for height, count in counts.items() if count] == [1, 6, 12]


class TestConservation:
    def test_fold_matches_the_ledger(self, dependent_chain):
        fold = ChainAnalyticsService().conservation(dependent_chain.best_chain())
        assert fold["balanced"]
        assert fold["total"] == total_coin(dependent_chain.tip_state)
        assert fold["coinbase"] == 12 * dependent_chain.config.subsidy
        assert fold["minted"] == 0

    def test_fees_leave_the_fold_balanced(self, root_key, chain_config):
        chain = ChainState(chain_config)
        _mine(chain, reward=root_key)
        reward = coins_of(chain.tip_state, root_key.account)[0]
        payment = sign_transaction(build_transfer(
            [make_input(reward.outpoint, root_key.account)], [(MINER.account, reward.kind.amount - 25)]
        ), [root_key])
        _mine(chain, [payment])
        fold = ChainAnalyticsService().conservation(chain.best_chain())
        assert fold["fees"] == 25
        assert fold["coinbase"] == 2 * chain_config.subsidy + 25
        assert fold["balanced"]


class TestShares:
    def test_block_shares_and_share_of(self, dependent_chain):
        analytics = ChainAnalyticsService()
        blocks = dependent_chain.best_chain()
        shares = analytics.block_shares(blocks)
        assert sum(shares.values()) == 12
        assert shares[OTHER.account] == 4
        assert analytics.share_of(blocks, [OTHER.account]) == pytest.approx(4 / 12)
        assert analytics.share_of(blocks[:1], [OTHER.account]) is None

    def test_no_duplicates_and_summaries(self, dependent_chain):
        analytics = ChainAnalyticsService()
        blocks = dependent_chain.best_chain()
        assert analytics.duplicate_txids(blocks) == []
        assert analytics.duplicate_txids(blocks + blocks[-1:]) != []
        summaries = analytics.block_summaries(blocks, {OTHER.account: "other"})
        assert summaries[0]["reward"] is None
        assert summaries[3]["reward"] == "other"
        assert summaries[1]["modes"] == {"COIN_TRANSFER": 1, "POLICY_CHANGE": 1}
        assert summaries[6]["mgmt_count"] == 1
