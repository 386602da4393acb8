"""Bit-exact, cycle-accurate simulator of an output-stationary systolic array
whose PEs share one flexible 8b-8b multiplier among 2 or 4 threads without
stalling (non-blocking simultaneous multithreading)."""

from sysmt.pe_core import ALL_STRATEGIES, Strategy, ThreadInput, WidthSource
from sysmt.lowering import QTile, act_tile, gen_synthetic, wgt_tile
from sysmt.systolic import GridConfig, reference_matmul, simulate

__all__ = [
    "ALL_STRATEGIES", "GridConfig", "QTile", "Strategy", "ThreadInput", "WidthSource",
    "act_tile", "gen_synthetic", "reference_matmul", "simulate", "wgt_tile",
]
__version__ = "0.1.0"
