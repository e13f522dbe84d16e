#!/usr/bin/env python3
"""
Main pipeline orchestrator for the RedApt pipeline.

Runs the flops / bench / search / ablate / train steps selected in
pipeline_main.yaml, each as its own scripts/run_<step>.py process, and
prints a summary at the end. Placeholders ({results_dir}, {seed},
{config}) in step arguments are substituted from the main config.

Usage:
    python scripts/run_pipeline.py --config configs/pipeline_main.yaml
    python scripts/run_pipeline.py --all
    python scripts/run_pipeline.py --flops --train
"""

import argparse
import os
import subprocess
import sys
from pathlib import Path

import yaml

SCRIPTS_DIR = Path(__file__).parent
PROJECT_ROOT = SCRIPTS_DIR.parent

STEPS = ['flops', 'bench', 'search', 'ablate', 'train']


def substitute_placeholders(text, substitutions):
    """
    Substitute placeholders in text with actual values.

    Args:
        text: String that may contain placeholders like {results_dir}
        substitutions: Dictionary of placeholder -> value mappings

    Returns:
        String with placeholders replaced
    """
    if isinstance(text, str):
        for key, value in substitutions.items():
            text = text.replace(f"{{{key}}}", str(value))
    return text


def load_main_config(config_path):
    with open(config_path, 'r') as f:
        return yaml.safe_load(f) or {}


def step_arguments(step, main_config):
    """Builds the argument list for one step: common flags, then the step's own args."""
    substitutions = {
        'results_dir': main_config.get('results_dir') or str(PROJECT_ROOT / 'results'),
        'seed': main_config.get('seed', 0),
        'config': main_config.get('config', 'desk'),
    }
    step_config = (main_config.get('steps') or {}).get(step) or {}
    args = [
        '--config', str(step_config.get('config', substitutions['config'])),
        '--seed', str(substitutions['seed']),
        '--out', substitutions['results_dir'],
    ]
    if main_config.get('log_file'):
        args += ['--log-file', substitute_placeholders(main_config['log_file'], substitutions)]
    args += [substitute_placeholders(str(a), substitutions) for a in step_config.get('args') or []]
    return args


def run_script(script_name, args=None):
    """Runs a script from scripts/ directory. Returns True if successful."""
    script_path = SCRIPTS_DIR / script_name
    if not script_path.exists():
        print(f"❌ Script not found: {script_path}")
        return False

    cmd = [sys.executable, str(script_path)]
    if args:
        cmd.extend(args)

    print(f"\n{'=' * 60}")
    print(f"Running: {script_name}")
    if args:
        print(f"Args: {' '.join(str(a) for a in args)}")
    print(f"{'=' * 60}\n")

    try:
        env = os.environ.copy()
        env['PYTHONUNBUFFERED'] = '1'
        process = subprocess.Popen(cmd, cwd=PROJECT_ROOT,
                                   stdout=subprocess.PIPE,
                                   stderr=subprocess.STDOUT,
                                   text=True, bufsize=1,
                                   env=env)
        # Stream output line by line
        for line in process.stdout:
            print(line, end='')
        returncode = process.wait()
        if returncode == 0:
            print(f"\n✅ {script_name} completed successfully")
        else:
            print(f"\n❌ {script_name} failed with exit code {returncode}")
        return returncode == 0
    except Exception as e:
        print(f"\n❌ Error running {script_name}: {e}")
        return False


def selected_steps(args, main_config):
    if args.all:
        return list(STEPS)
    flagged = [step for step in STEPS if getattr(args, step)]
    if flagged:
        return flagged
    steps = main_config.get('steps') or {}
    return [step for step in STEPS if (steps.get(step) or {}).get('enabled', False)]


def main():
    parser = argparse.ArgumentParser(
        description='RedApt Pipeline Orchestrator',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Use main config file (recommended)
  python scripts/run_pipeline.py --config configs/pipeline_main.yaml

  # Run every step
  python scripts/run_pipeline.py --all

  # Run specific steps
  python scripts/run_pipeline.py --flops --bench
        """
    )
    parser.add_argument('--config', type=str, default=str(PROJECT_ROOT / 'configs' / 'pipeline_main.yaml'),
                        help='Path to main pipeline config file (pipeline_main.yaml)')
    parser.add_argument('--all', action='store_true', help='Run every step')
    for step in STEPS:
        parser.add_argument(f"--{step}", action='store_true', help=f"Run the {step} step")
    parser.add_argument('--stop_on_error', action='store_true', help='Stop at the first failing step')
    args = parser.parse_args()

    main_config = load_main_config(args.config) if os.path.exists(args.config) else {}
    steps = selected_steps(args, main_config)
    if not steps:
        print("⚠️  No steps selected (enable them in pipeline_main.yaml or pass --all)")
        return 1

    print(f"📋 Steps: {', '.join(steps)}")
    results = {}
    for step in steps:
        results[step] = run_script(f"run_{step}.py", step_arguments(step, main_config))
        if not results[step] and (args.stop_on_error or main_config.get('stop_on_error', False)):
            break

    print(f"\n{'=' * 60}")
    print("PIPELINE SUMMARY")
    print(f"{'=' * 60}")
    for step, ok in results.items():
        print(f"  {'✅' if ok else '❌'} {step}")
    failed = [step for step, ok in results.items() if not ok]
    if failed:
        print(f"\n❌ {len(failed)} step(s) failed: {', '.join(failed)}")
        return 1
    print("\n🎉 All steps completed successfully")
    return 0


if __name__ == '__main__':
    sys.exit(main())
