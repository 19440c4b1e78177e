"""Consensus-driven multi-view retrieval and slot-bound execution for
multi-hop question answering."""

__version__ = "0.1.0"
