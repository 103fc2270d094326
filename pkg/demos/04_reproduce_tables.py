"""
Reproducing both iteration tables
=================================

Same as ``bilincontrol reproduce 1`` and ``bilincontrol reproduce 2``: all
three methods, ten iterations each, CSV output in ./reproduced/.
"""

from bilincontrol.cli import cmd_reproduce

for example_id in (1, 2):
    print(f"example {example_id}")
    cmd_reproduce(example_id, f"reproduced/example{example_id}")
    print()
