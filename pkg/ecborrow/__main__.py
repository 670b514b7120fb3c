"""Entry point for `python -m ecborrow`."""
import sys

from ecborrow.cli import main

if __name__ == "__main__":
    sys.exit(main())
