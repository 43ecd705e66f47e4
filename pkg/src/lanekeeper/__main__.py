import sys

from lanekeeper.cli import main

sys.exit(main())
