"""MSE as the column-4 missing rate grows (desk scale).

Extra arguments are passed to `rfassign study-rates`, e.g. `--full` or
`--replicates 5 --threads 4`.
"""

import sys
from pathlib import Path

from rfassign.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    argv = ["study-rates", "--config", str(ROOT / "configs" / "desk_study.yaml"),
            "--out-dir", str(ROOT / "results" / "rates"), "--verbose"]
    sys.exit(main(argv + sys.argv[1:]))
