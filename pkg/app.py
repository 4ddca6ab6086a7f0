"""
Low-Light Dequantization Toolkit — command-line entry point.

    python app.py synth data/manifest.txt out/pairs --preset bsd-global
    python app.py train data/manifest.txt runs/g.ckpt --iterations 2000
    python app.py enhance dark.png bright.png --checkpoint runs/g.ckpt
"""
import sys
import logging
from pathlib import Path

# Ensure project root is on path
PROJECT_ROOT = Path(__file__).resolve().parent
sys.path.insert(0, str(PROJECT_ROOT))

from commands.router import run


def log_level(argv):
    if "-v" in argv or "--verbose" in argv:
        return logging.DEBUG
    if "-q" in argv or "--quiet" in argv:
        return logging.WARNING
    return logging.INFO


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    # ─────────────────────────────────────
    # Logging
    # ─────────────────────────────────────
    logging.basicConfig(level=log_level(argv), format="%(asctime)s [%(levelname)s] %(name)s - %(message)s")
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
