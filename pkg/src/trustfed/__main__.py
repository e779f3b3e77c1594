import sys

from trustfed.cli import main

sys.exit(main())
