#!/usr/bin/env python3
"""
Closed-form FLOPs and activation-memory report.

Writes cost.csv / cost.json (and optional ratio tables) under results/flops/.
All flags are those of `redapt flops`.

Usage:
    python scripts/run_flops.py --config desk
"""

import os
import sys

# Allow running from a checkout without installing the package
src_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src')
if os.path.exists(src_dir):
    sys.path.insert(0, src_dir)

from redapt.cli import main  # noqa: E402


if __name__ == '__main__':
    sys.exit(main(['flops'] + sys.argv[1:]))
