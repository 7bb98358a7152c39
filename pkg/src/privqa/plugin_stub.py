"""Reference external scorer: scores each input by its character length.

Run as ``python -m privqa.plugin_stub``. Useful as a protocol smoke test
and as a template for real scorer plugins.
"""

from __future__ import annotations

import json
import sys


def main() -> int:
    sys.stdout.write(json.dumps({"protocol": 1}) + "\n")
    sys.stdout.flush()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        scores = [float(len(text)) for text in request["inputs"]]
        sys.stdout.write(json.dumps({"id": request["id"], "scores": scores}) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
