"""Run the acceptance criteria and print one PASS/FAIL line per criterion.

    python scripts/run_acceptance.py            # all criteria
    python scripts/run_acceptance.py 1 2 11     # a subset
"""

import sys

from hjchar.acceptance import run_criteria

if __name__ == "__main__":
    which = [int(a) for a in sys.argv[1:]] or None
    results = run_criteria(which, stream=sys.stdout)
    sys.exit(0 if all(r.passed for r in results) else 1)
