import sys

from absf.cli import main

sys.exit(main())
