"""Entry point for running gvkf as a module."""

import sys

from gvkf.cli.main import main

if __name__ == '__main__':
    sys.exit(main())
