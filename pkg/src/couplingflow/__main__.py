import sys

from couplingflow.harness import main

sys.exit(main())
