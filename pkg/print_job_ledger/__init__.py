"""
Print Job Ledger - an auditable print job channel on a miniature blockchain

This package records 3D print requests, approvals and responses as signed
contract calls on a proof-of-work hash chain, keeps model files in a
content-addressed store, and measures phase latencies in a deterministic
discrete-event simulation.
"""

__version__ = "1.0.1"
__author__ = "Print Ledger Development Team"
__email__ = "developer@example.com"

# Import main classes for easy access
try:
    from .identity import KeyPair, keygen, address_of, sign, verify
    from .ledger import Chain, Block, Transaction, verify_chain, read_state
    from .contract import ContractState, RequestRecord, CreateJob, ApproveJob, RespondJob
    from .blobstore import MemoryBlobStore, DirectoryBlobStore
    from .agents import PrintClient, PrintServer, audit_job
    from .config import SimConfig
    from .simnet import run_sim, check_bound, summarize
    from .cli import main as cli_main
except ImportError:
    # Handle import errors gracefully during setup
    pass

__all__ = [
    'KeyPair',
    'keygen',
    'address_of',
    'sign',
    'verify',
    'Chain',
    'Block',
    'Transaction',
    'verify_chain',
    'read_state',
    'ContractState',
    'RequestRecord',
    'CreateJob',
    'ApproveJob',
    'RespondJob',
    'MemoryBlobStore',
    'DirectoryBlobStore',
    'PrintClient',
    'PrintServer',
    'audit_job',
    'SimConfig',
    'run_sim',
    'check_bound',
    'summarize',
    'cli_main',
]
