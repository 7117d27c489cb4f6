import sys

from geoequiv.cli import main

sys.exit(main())
