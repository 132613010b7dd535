import sys

from htnlearn.cli import main

sys.exit(main())
