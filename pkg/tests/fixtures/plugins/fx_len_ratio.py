"""Protocol-v1 fixture metric: candidate/reference length ratio in [0, 1]."""

import json
import sys


def main() -> int:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        cand = len(req["candidate"].split())
        best = 0.0
        for ref in req["references"]:
            r = len(ref.split())
            if cand == 0 and r == 0:
                score = 1.0
            elif cand == 0 or r == 0:
                score = 0.0
            else:
                score = min(cand, r) / max(cand, r)
            best = max(best, score)
        sys.stdout.write(f"{req['id']}\t{best}\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
