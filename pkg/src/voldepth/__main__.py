import sys

from voldepth.cli import main

sys.exit(main())
