import sys

from para.cli import main

sys.exit(main())
