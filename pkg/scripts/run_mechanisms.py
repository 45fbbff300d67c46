"""MSE and bias of every method under every mechanism (desk scale).

Extra arguments are passed to `rfassign study-mechanisms`, e.g. `--full` or
`--replicates 5 --threads 4`.
"""

import sys
from pathlib import Path

from rfassign.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    argv = ["study-mechanisms", "--config", str(ROOT / "configs" / "desk_study.yaml"),
            "--out-dir", str(ROOT / "results" / "mechanisms"), "--verbose"]
    sys.exit(main(argv + sys.argv[1:]))
