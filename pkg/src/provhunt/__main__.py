import sys

from provhunt.cli import main

sys.exit(main())
