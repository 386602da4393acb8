import sys

from sysmt.cli import main

sys.exit(main())
