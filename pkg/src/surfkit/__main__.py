import sys

from surfkit.cli import main

sys.exit(main())
