"""
Report writing functions for the RedApt pipeline.

Provides CSV (pandas), JSON and JSON-lines writers plus the results
directory layout. Every JSON object carries ``schema_version``.
"""

import json
import logging
import os

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def ensure_dir(path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_csv(frame, path):
    """Write a DataFrame (or list of dicts) without the index."""
    if not isinstance(frame, pd.DataFrame):
        frame = pd.DataFrame(frame)
    ensure_dir(path)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} rows to {path}")


def write_json(payload, path):
    """Write one JSON object, adding schema_version if absent."""
    payload = {'schema_version': SCHEMA_VERSION, **payload}
    ensure_dir(path)
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2, sort_keys=False, default=_json_default)
        f.write('\n')
    logger.info(f"Wrote {path}")


def write_jsonl(records, path):
    """One JSON object per line, each with schema_version."""
    ensure_dir(path)
    count = 0
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps({'schema_version': SCHEMA_VERSION, **record}, default=_json_default) + '\n')
            count += 1
    logger.info(f"Wrote {count} records to {path}")


def read_jsonl(path):
    with open(path, 'r') as f:
        return [json.loads(line) for line in f if line.strip()]


def results_path(out_dir, command, filename):
    """``<out_dir>/<command>/<filename>``, creating the directory."""
    path = os.path.join(out_dir, command, filename)
    ensure_dir(path)
    return path
