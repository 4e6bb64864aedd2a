"""Main script to regenerate the data of the experiments."""

import sys

from rabi_dpt import cli

if __name__ == "__main__":
    sys.exit(cli.main())
