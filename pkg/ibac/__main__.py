import sys

from ibac.runner import main

sys.exit(main())
