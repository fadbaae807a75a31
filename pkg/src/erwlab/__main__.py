import sys

from erwlab.cli import main

sys.exit(main())
