"""
Atomic file output.

Files are written to a temporary sibling and renamed into place, so
concurrent cells never interleave bytes and readers never see a partial file.
"""

import os
import tempfile
from typing import Union


def write_bytes_atomic(path: str, payload: bytes) -> str:
    """Write bytes to a path atomically.

    Args:
        path (str): Destination file path
        payload (bytes): File content

    Returns:
        str: The destination path
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(handle, "wb") as f:
            f.write(payload)
        os.replace(temp_path, path)
    except Exception:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise
    return path


def write_text_atomic(path: str, text: Union[str, bytes]) -> str:
    """Write UTF-8 text to a path atomically.

    Args:
        path (str): Destination file path
        text (str): File content

    Returns:
        str: The destination path
    """
    payload = text if isinstance(text, bytes) else text.encode("utf-8")
    return write_bytes_atomic(path, payload)
