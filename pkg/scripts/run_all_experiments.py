#!/usr/bin/env python3
"""Run every bundled experiment config through the CLI into out/<name>/."""

import pathlib
import sys
import time

from carleman_lab.cli import run

CONFIGS = {
    "identity-check": "identity_check.json",
    "conjugation-check": "conjugation_check.json",
    "expansion-check": "expansion_check.json",
    "d2-check": "d2_check.json",
    "psd-check": "psd_check.json",
    "assumption-check": "assumption_check.json",
    "qv-check": "qv_check.json",
    "inequality-scan": "inequality_scan_t42.json",
    "propagation": "propagation.json",
    "ucp-decay": "ucp_decay.json",
    "geometry": "geometry.json",
    "sweep": "sweep.json",
}


def main() -> int:
    here = pathlib.Path(__file__).parent
    out_root = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else pathlib.Path("out")
    gnuplot = "--gnuplot" in sys.argv
    worst = 0
    for sub, cfg in CONFIGS.items():
        t0 = time.perf_counter()
        code = run(str(here / "configs" / cfg), sub, out_dir=str(out_root / sub), gnuplot=gnuplot)
        print(f"[{sub}] exit {code} ({time.perf_counter() - t0:.1f}s)")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
