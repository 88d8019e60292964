from __future__ import annotations

import hashlib
import io
import os
import re
from pathlib import Path

import pandas as pd

REPORT_FLOAT_FORMAT = "%.9g"

# Characters allowed in a single file-name segment on most platforms.
_ALLOWED_SEGMENT_RE = re.compile(r"[^A-Za-z0-9._-]")


def safe_name(raw: str) -> str:
    """
    Sanitize *raw* for use in a single file-name segment.

    - Replace any '/' or '\\' runs with '__'
    - Replace other disallowed characters with '_'
    - Avoid leading dot to prevent hidden files
    """
    s = re.sub(r"[\\/]+", "__", raw)
    s = _ALLOWED_SEGMENT_RE.sub("_", s)
    if s.startswith("."):
        s = "_" + s.lstrip(".")
    return s or "_"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Atomically replace *path* with *data* (temp file + ``os.replace``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with tmp.open("wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except Exception:
        try:
            tmp.unlink()
        except OSError:
            pass
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dataframe_csv_bytes(df: pd.DataFrame, *, float_format: str = REPORT_FLOAT_FORMAT) -> bytes:
    buf = io.StringIO()
    df.to_csv(buf, index=False, float_format=float_format, lineterminator="\n")
    return buf.getvalue().encode("utf-8")


def write_csv(df: pd.DataFrame, path: Path, *, float_format: str = REPORT_FLOAT_FORMAT) -> Path:
    """Write *df* without index, floats at the given precision, NaN as empty."""
    atomic_write_bytes(path, dataframe_csv_bytes(df, float_format=float_format))
    return Path(path)


def sha256_file(path: Path, chunk_size: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            h.update(chunk)
    return h.hexdigest()
