"""Protocol-v1 fixture that emits a non-numeric score."""

import json
import sys


def main() -> int:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        sys.stdout.write(f"{req['id']}\tnot-a-number\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
