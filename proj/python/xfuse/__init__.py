"""Cross-modal fusion + distillation domain adaptation pipeline bindings.

The compiled extension lives in either the installed package directory or,
for build-tree runs, wherever XFUSE_EXT_DIR points.
"""

import os
import sys

_ext_dir = os.environ.get("XFUSE_EXT_DIR")
if _ext_dir and _ext_dir not in sys.path:
    sys.path.insert(0, _ext_dir)

try:
    from xfuse._core import *  # noqa: F401,F403
    from xfuse._core import __doc__ as _core_doc  # noqa: F401
except ImportError:
    from _core import *  # noqa: F401,F403

__version__ = "0.1.0"
