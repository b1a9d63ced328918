#!/usr/bin/env python3
"""Regenerate the committed --help snapshots under tests/data/cli_help/.

Run after any CLI flag change, then review the diff:

    python3 scripts/update_help_snapshots.py
"""

from pathlib import Path

from click.testing import CliRunner

from stackfuse.cli import main

SNAPSHOT_DIR = Path(__file__).resolve().parent.parent / "tests" / "data" / "cli_help"

COMMANDS = {
    "root": [],
    "fuse": ["fuse"],
    "fuse-pair": ["fuse-pair"],
    "metrics": ["metrics"],
    "bench": ["bench"],
}


def render(args):
    runner = CliRunner()
    result = runner.invoke(main, args + ["--help"], prog_name="stackfuse",
                           env={"COLUMNS": "100"})
    if result.exit_code != 0:
        raise RuntimeError(f"--help failed for {args}: {result.output}")
    return result.output


def update():
    SNAPSHOT_DIR.mkdir(parents=True, exist_ok=True)
    for name, args in COMMANDS.items():
        target = SNAPSHOT_DIR / f"{name}.txt"
        target.write_text(render(args))
        print(f"wrote {target}")


if __name__ == "__main__":
    update()
