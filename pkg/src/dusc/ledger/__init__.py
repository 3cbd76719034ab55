from .chain import (
    BROADCAST,
    DEFAULT_MAX_TXS,
    Block,
    Chain,
    InvalidBlock,
    LedgerError,
    Transaction,
    block_hash,
    genesis,
    is_valid_chain,
    leading_zero_bits,
    make_transaction,
    mine,
    resolve,
    retrieve,
    validate_block,
    validate_chain,
)
from .network import Clock, NetworkSim, Node
from .storage import ChainFileError, dump_chain, load_chain, parse_chain, save_chain
