"""
Base IO code for all datasets
"""

import os

from ..exceptions import DatasetIndexError


def get_pastis_root(root=None):
    """Return the root directory of a PASTIS-layout dataset.

    Falls back on the **PASTIS_ROOT** environment variable when ``root`` is None.

    Raises
    ------
    DatasetIndexError
        if no root is given and ``PASTIS_ROOT`` is not set,
        or if the directory does not exist
    """
    if root is None:
        root = os.environ.get("PASTIS_ROOT")
        if not root:
            raise DatasetIndexError("no dataset root given and PASTIS_ROOT is not set")
    root = os.path.expanduser(os.fspath(root))
    if not os.path.isdir(root):
        raise DatasetIndexError("dataset root does not exist", root)
    return root
