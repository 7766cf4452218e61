"""Entry-point module, in case you use `python -m recallgym`."""

import sys

from recallgym.cli import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
