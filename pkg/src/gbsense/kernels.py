"""Backend selection for the SU(2) step-product kernel.

The compiled extension is used when it imports; set ``GBSENSE_PURE_PYTHON=1``
to force the numpy fallback.
"""
import logging
import os

from . import _su2_py

log = logging.getLogger(__name__)

BACKEND = "python"
su2_chain = _su2_py.su2_chain

if os.environ.get("GBSENSE_PURE_PYTHON") != "1":
    try:
        from . import _su2

        su2_chain = _su2.su2_chain
        BACKEND = "cython"
    except ImportError:
        log.debug("compiled _su2 kernel unavailable, using numpy fallback")
