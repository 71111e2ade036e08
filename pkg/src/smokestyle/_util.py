"""Small shared helpers."""

from __future__ import annotations

import os
import tempfile


def atomic_write(path, data: bytes) -> None:
    """Write bytes to path via a temp file + rename so readers never see
    a half-written file."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
