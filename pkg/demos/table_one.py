"""
Plain training vs HSST, one seed
================================

The desk-scale version of the masked/non-masked comparison: pretrain on a
VIS-only pool, fine-tune with each method on non-masked and masked NIR
pairs, and test with masked and non-masked probes.  Takes a few minutes on
one CPU core; `hsstlab repro-tableI --seed 7` does the same from the shell.
"""

import logging

from hsstlab.config import RunConfig
from hsstlab.experiments import run_table_one

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = RunConfig(seed=7)
table = run_table_one(cfg, out_dir="demo_out/table_one")
print(table.format())

plain_gap = table.get("plain", False, False).rank1 - table.get("plain", False, True).rank1
hsst_gain = table.get("hsst", True, True).rank1 - table.get("plain", True, True).rank1
print(f"masks cost plain training {100 * plain_gap:.1f} rank-1 points; "
      f"HSST adds {100 * hsst_gain:.1f} points on masked data")
