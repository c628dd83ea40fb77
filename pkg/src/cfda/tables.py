"""Small CSV helpers shared by every artifact writer."""

import csv
import io
from pathlib import Path

from .errors import HeaderMismatch, MissingUpstreamArtifact


def fmt(value) -> str:
    """Format a number with 15 significant digits (stable text for diffs)."""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool,)):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    x = float(value)
    if x == 0.0:
        return "0"
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".15g")


def write_csv(target, header, rows):
    """Write ``rows`` under ``header`` to a path or text stream.

    Returns the written text when ``target`` is None.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if target is None:
        return text
    if hasattr(target, "write"):
        target.write(text)
    else:
        path = Path(target)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return None


def read_csv(source, expected_header, allow_empty=True):
    """Read a CSV with an exact expected header; returns a list of dict rows."""
    if hasattr(source, "read"):
        text = source.read()
        name = getattr(source, "name", "<stream>")
    else:
        path = Path(source)
        if not path.is_file():
            raise MissingUpstreamArtifact(path)
        text = path.read_text(encoding="utf-8")
        name = str(path)
    if not text.strip():
        raise MissingUpstreamArtifact(name)
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    if header != list(expected_header):
        raise HeaderMismatch(f"{name}: expected header {list(expected_header)}, got {header}")
    rows = [dict(zip(header, r)) for r in reader if r]
    if not rows and not allow_empty:
        raise MissingUpstreamArtifact(name, f"{name} has a header but no rows")
    return rows
