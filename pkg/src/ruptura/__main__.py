"""``python -m ruptura``."""
from __future__ import annotations

from ruptura.cli import main

raise SystemExit(main())
