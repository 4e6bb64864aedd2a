import sys

from rabi_dpt import cli

sys.exit(cli.main())
