#!/usr/bin/env python3
"""
RedApt ablation runs on the toy task.

Runs the full, no_second_cnn, no_layernorm and no_gelu rows and writes ablation.csv.
All flags are those of `redapt ablate`.

Usage:
    python scripts/run_ablate.py --config desk
"""

import os
import sys

# Allow running from a checkout without installing the package
src_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src')
if os.path.exists(src_dir):
    sys.path.insert(0, src_dir)

from redapt.cli import main  # noqa: E402


if __name__ == '__main__':
    sys.exit(main(['ablate'] + sys.argv[1:]))
