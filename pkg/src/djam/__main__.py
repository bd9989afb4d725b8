import sys

from djam.cli import main

sys.exit(main())
