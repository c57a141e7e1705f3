"""Allow ``python -m rs2g``."""

import sys

from .cli import main

sys.exit(main())
