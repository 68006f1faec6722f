import sys

from qwglab.cli import main

sys.exit(main())
