"""Small file-writing helpers shared by the library and the CLI."""

from __future__ import annotations

import os
import tempfile


def atomic_write_bytes(path, blob: bytes) -> None:
    """Write bytes to path via a temp file and rename.

    Readers never observe a partially written file.
    """
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
