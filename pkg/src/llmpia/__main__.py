import sys

from llmpia.cli import main

sys.exit(main())
