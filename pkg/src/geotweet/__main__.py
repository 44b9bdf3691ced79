"""Allow running as: python -m geotweet"""

import sys

from geotweet.cli import main

sys.exit(main())
