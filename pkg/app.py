import os
import logging
from dataclasses import dataclass
from typing import Optional

from models import AccountKey, ChainConfig


def configure_logging(level: Optional[str] = None) -> None:
    # WARNING by default keeps CLI output byte-identical between runs
    level_name = (level or os.environ.get("ROLECHAIN_LOG_LEVEL", "WARNING")).upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


@dataclass(frozen=True)
class NodeConfig:
    """Node configuration that deliberately lives off-chain"""
    y_min: int = 16
    bootstrap_window: int = 20
    subsidy: int = 5_000_000_000
    target_bits: int = 252
    seed: Optional[int] = None

    @classmethod
    def from_env(cls) -> "NodeConfig":
        seed = os.environ.get("ROLECHAIN_SEED")
        config = cls(
            y_min=int(os.environ.get("ROLECHAIN_Y_MIN", 16)),
            bootstrap_window=int(os.environ.get("ROLECHAIN_BOOTSTRAP_WINDOW", 20)),
            subsidy=int(os.environ.get("ROLECHAIN_SUBSIDY", 5_000_000_000)),
            target_bits=int(os.environ.get("ROLECHAIN_TARGET_BITS", 252)),
            seed=int(seed) if seed else None,
        )
        config.check()
        return config

    def check(self) -> None:
        if self.y_min < 1:
            raise ValueError("ROLECHAIN_Y_MIN must be at least 1")
        if self.bootstrap_window < 1:
            raise ValueError("ROLECHAIN_BOOTSTRAP_WINDOW must be at least 1")
        if not 1 <= self.target_bits <= 255:
            raise ValueError("ROLECHAIN_TARGET_BITS must be between 1 and 255")
        if self.subsidy < 0:
            raise ValueError("ROLECHAIN_SUBSIDY must not be negative")

    @property
    def target(self) -> int:
        return 1 << self.target_bits

    def chain_config(self, root_key: AccountKey) -> ChainConfig:
        return ChainConfig(
            root_key=root_key,
            subsidy=self.subsidy,
            target=self.target,
            y_min=self.y_min,
            bootstrap_window=self.bootstrap_window,
        )
