import sys

from chartgrpo.cli import main

sys.exit(main())
