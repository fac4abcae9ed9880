import sys

from recurrence.infrastructure.cli import main

if __name__ == "__main__":
    sys.exit(main())
