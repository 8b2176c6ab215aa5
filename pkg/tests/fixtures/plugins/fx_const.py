"""Protocol-v1 fixture metric: constant 1.0 for every request."""

import json
import sys


def main() -> int:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        sys.stdout.write(f"{req['id']}\t1.0\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
