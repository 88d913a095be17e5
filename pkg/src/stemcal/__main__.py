import sys

from stemcal.cli import main

sys.exit(main())
