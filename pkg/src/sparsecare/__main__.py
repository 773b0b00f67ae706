import sys

from sparsecare.cli import main

sys.exit(main())
