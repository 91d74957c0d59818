import sys

from cea_engine.cli import main

sys.exit(main())
