"""Multi-scale quartered triangle networks.

JSON-first bindings over the C++ core: every function takes and returns
canonical JSON strings, so results are byte-stable and easy to diff, store,
or feed back into the command-line tool.
"""

from ._msqferry import (
    find_route,
    generate_network,
    optimize,
    plan_cycles,
    simulate,
    validate_network,
    version,
)

__all__ = [
    "find_route",
    "generate_network",
    "optimize",
    "plan_cycles",
    "simulate",
    "validate_network",
    "version",
]

__version__ = version()
