import sys

from counterlens import main

if __name__ == "__main__":
    sys.exit(main())
