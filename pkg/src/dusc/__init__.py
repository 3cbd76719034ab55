"""Decentralized user-centric access control over a block-chain store with Bloom-filter pub/sub."""

__version__ = "0.1.0"
