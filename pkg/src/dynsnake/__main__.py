import sys

from dynsnake.cli import main

sys.exit(main())
