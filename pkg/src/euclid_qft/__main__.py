"""Entry point for ``python -m euclid_qft``."""

import sys

from euclid_qft.cli import main

if __name__ == "__main__":
    sys.exit(main())
