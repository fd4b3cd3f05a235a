import sys

from person_locator.app import main

sys.exit(main())
