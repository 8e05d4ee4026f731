"""Rewrite the golden report bundle in place.

Run from the repository root after an intentional rendering change:

    python3 tests/golden/regenerate.py

then review the diff before committing.
"""

import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from golden_utils import GOLDEN_DIR, write_bundle


def main() -> None:
    with tempfile.TemporaryDirectory() as work:
        write_bundle(Path(work), GOLDEN_DIR)
    print(f"regenerated golden files in {GOLDEN_DIR}")


if __name__ == "__main__":
    main()
