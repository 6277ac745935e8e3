"""Allow running the CLI as ``python -m wgstokes``."""

import sys

from .cli import main

sys.exit(main())
