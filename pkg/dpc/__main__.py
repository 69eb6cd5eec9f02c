import sys

from dpc.main import main

sys.exit(main())
