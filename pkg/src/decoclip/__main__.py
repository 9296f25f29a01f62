import sys

from decoclip.cli import main

sys.exit(main())
