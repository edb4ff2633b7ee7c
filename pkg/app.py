"""
Command-line entry point for the BPTD toolkit

Run:
  python app.py fit --tensor runs/sim/tensor.tsv --dims 10,6,3 --seed 7 --out runs/fit

Env (example):
  BPTD_LOG_LEVEL=INFO
  BPTD_WORKERS=4
  BPTD_OUTPUT_DIR=runs
"""
import sys

from dotenv import load_dotenv

# Load environment variables before settings are first read
load_dotenv()

from src.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
