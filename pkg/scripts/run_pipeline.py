# Helper script to run the end-to-end pipeline: python scripts/run_pipeline.py --config run.toml
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from gransel.main import run  # noqa: E402

if __name__ == "__main__":
    sys.exit(run(["run", *sys.argv[1:]]))
