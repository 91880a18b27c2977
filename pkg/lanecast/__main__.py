import sys

from lanecast.main import main

sys.exit(main())
