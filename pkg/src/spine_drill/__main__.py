import sys

from spine_drill.cli import run

sys.exit(run())
