import sys

from co3.cli import main

sys.exit(main())
