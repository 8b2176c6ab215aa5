"""Protocol-v1 fixture that drops its final response on multi-request batches.

Single-request batches (the submission probe) are answered correctly, so the
fault only appears during a full recompute.
"""

import json
import sys


def main() -> int:
    requests = [json.loads(ln) for ln in sys.stdin if ln.strip()]
    keep = requests if len(requests) <= 1 else requests[:-1]
    for req in keep:
        sys.stdout.write(f"{req['id']}\t0.5\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
