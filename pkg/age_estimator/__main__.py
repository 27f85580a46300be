from __future__ import annotations

from age_estimator._main import main

if __name__ == "__main__":
    raise SystemExit(main())
