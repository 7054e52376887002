import sys

from sphere_seg.Scripts.cli import main

if __name__ == "__main__":
    sys.exit(main())
