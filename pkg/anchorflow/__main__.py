import sys

from anchorflow.cli import main

sys.exit(main())
