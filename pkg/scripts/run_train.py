#!/usr/bin/env python3
"""
Toy-task training.

Writes metrics.csv, metrics.jsonl and checkpoint.rapt under results/train/.
All flags are those of `redapt train`.

Usage:
    python scripts/run_train.py --config desk
"""

import os
import sys

# Allow running from a checkout without installing the package
src_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src')
if os.path.exists(src_dir):
    sys.path.insert(0, src_dir)

from redapt.cli import main  # noqa: E402


if __name__ == '__main__':
    sys.exit(main(['train'] + sys.argv[1:]))
