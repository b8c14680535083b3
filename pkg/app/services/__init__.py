"""Services package initialization."""

from app.services.choice import DecayFunction, RevenueMnl, TruncatedMnl
from app.services.index_store import IndexStore, load_index, persist_index
from app.services.lsh import LshTableSet, build_lsh, query_lsh
from app.services.lss import LssIndex, build_lss, plan_levels, query_lss
from app.services.optimizer import build_ensemble, greedy, lazy_greedy, recommend, required_samples
from app.services.oracle import estimate_inclusion, exhaustive_opt, ideal_sample, saa_gap

__all__ = [
    "DecayFunction",
    "TruncatedMnl",
    "RevenueMnl",
    "LshTableSet",
    "build_lsh",
    "query_lsh",
    "LssIndex",
    "plan_levels",
    "build_lss",
    "query_lss",
    "build_ensemble",
    "greedy",
    "lazy_greedy",
    "recommend",
    "required_samples",
    "ideal_sample",
    "exhaustive_opt",
    "estimate_inclusion",
    "saa_gap",
    "IndexStore",
    "persist_index",
    "load_index",
]
