"""``python -m softalign`` dispatches to the CLI."""

import sys

from softalign.cli import main

if __name__ == "__main__":
    sys.exit(main())
