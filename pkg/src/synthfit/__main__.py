"""Allow ``python -m synthfit``."""

import sys

from .cli import main

sys.exit(main())
