"""Bloom-filtered publish/subscribe over the ledger."""

from .bloom import BloomFilter, build_filter, optimal_bits, optimal_hashes
from .publisher import (
    DeliveryBatch,
    Publisher,
    PubSubError,
    ReorgError,
    Subscriber,
    Subscription,
    exact_match,
    filter_block,
)
