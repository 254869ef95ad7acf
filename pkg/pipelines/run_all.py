from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time
from pathlib import Path


PIPELINE_DIR = Path(__file__).resolve().parent
PROJECT_ROOT = PIPELINE_DIR.parent
ENTRY = PROJECT_ROOT / "main.py"

if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from app.core.config import get_settings  # noqa: E402

PIPELINE_ORDER = ["synth", "full", "ablate"]


def build_commands(out_dir: Path, config: Path | None = None) -> list[list[str]]:
    """CLI invocations reproducing the synthetic experiment, in run order."""
    out_dir = Path(out_dir)
    data_dir = out_dir / "data"
    config_args = ["--config", str(config)] if config is not None else []
    commands = []
    for verb in PIPELINE_ORDER:
        target = data_dir if verb == "synth" else out_dir / verb
        cmd = [sys.executable, "-X", "utf8", str(ENTRY), verb, *config_args, "--out", str(target)]
        if verb != "synth":
            cmd += ["--data", str(data_dir)]
        commands.append(cmd)
    return commands


def _run_command(cmd: list[str]) -> None:
    verb = cmd[4]
    print(f"\n=== Running mlc {verb} ===")
    start = time.perf_counter()
    env = os.environ.copy()
    env["PYTHONIOENCODING"] = "utf-8"
    env["PYTHONUTF8"] = "1"
    subprocess.run(cmd, cwd=PROJECT_ROOT, check=True, env=env)
    elapsed = time.perf_counter() - start
    print(f"=== Completed mlc {verb} in {elapsed:.2f}s ===")


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="Reproduce the synthetic experiment end to end.")
    parser.add_argument("--out", type=Path, default=get_settings().runs_dir / "synthetic")
    parser.add_argument("--config", type=Path, default=None)
    args = parser.parse_args(argv)
    for cmd in build_commands(args.out, args.config):
        _run_command(cmd)
    print(f"\nAll runs completed; artifacts under {args.out}")


if __name__ == "__main__":
    main()
