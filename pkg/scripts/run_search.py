#!/usr/bin/env python3
"""
Backward selection of RedApt positions.

Writes trace.jsonl and search.json under results/search/.
All flags are those of `redapt search`.

Usage:
    python scripts/run_search.py --config desk
"""

import os
import sys

# Allow running from a checkout without installing the package
src_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src')
if os.path.exists(src_dir):
    sys.path.insert(0, src_dir)

from redapt.cli import main  # noqa: E402


if __name__ == '__main__':
    sys.exit(main(['search'] + sys.argv[1:]))
