"""
Tab-separated text helpers shared by ingestion, traces and exports
"""
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

PathOrStream = Union[str, Path, IO[str]]


@contextmanager
def open_text(target: PathOrStream, mode: str = "r") -> Iterator[IO[str]]:
    """Open a path as UTF-8 text, or pass an already-open stream through untouched"""
    if isinstance(target, (str, Path)):
        path = Path(target)
        if "w" in mode or "a" in mode:
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, mode, encoding="utf-8", newline="") as handle:
            yield handle
    else:
        yield target


def iter_rows(
    stream: IO[str],
    delimiter: str = "\t",
    comment_prefix: Optional[str] = "#",
) -> Iterator[Tuple[int, Optional[List[str]]]]:
    """
    Yield (line number, fields) for every line

    Comment lines yield ``None`` for fields so callers can count them; blank lines are
    skipped entirely. Line numbers are 1-based.
    """
    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if comment_prefix and line.lstrip().startswith(comment_prefix):
            yield line_no, None
            continue
        yield line_no, [field.strip() for field in line.split(delimiter)]


def format_value(value) -> str:
    """Shortest round-trip text of a float (numpy scalars included); `str` for anything else"""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_rows(
    target: PathOrStream,
    header: Optional[Sequence[str]],
    rows: Iterable[Sequence],
    comments: Sequence[str] = (),
) -> int:
    """
    Write rows as TSV with an optional header; returns the number of data rows

    Floats are written with `repr` so values read back bit-identically.
    """
    count = 0
    with open_text(target, "w") as handle:
        for comment in comments:
            handle.write(f"# {comment}\n")
        if header:
            handle.write("\t".join(header) + "\n")
        for row in rows:
            handle.write("\t".join(format_value(v) for v in row) + "\n")
            count += 1
    if isinstance(target, (str, Path)):
        logger.debug(f"Wrote {count} rows to {target}")
    return count
