"""
Event Store Service
Parses dyadic event logs into vocabularies, tokens and a sparse count tensor
"""
import logging
from collections import Counter
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from dateutil.parser import isoparse

from src.core.errors import DataError
from src.models.core import (
    N_ACTION_CODES,
    BinningMode,
    ColumnSchema,
    EventToken,
    IngestReport,
    MalformedLine,
    TimeBinning,
    Vocabulary,
    quadclass_of,
)
from src.models.tensors import CountTensor, TokenArrays
from src.utils.tsv import PathOrStream, iter_rows, open_text, write_rows

logger = logging.getLogger(__name__)

MAX_LOGGED_MALFORMED = 10

Tokens = Union[Sequence[EventToken], TokenArrays]


def _month_index(value: str, anchor: str) -> int:
    when = isoparse(value)
    start = isoparse(anchor)
    return (when.year - start.year) * 12 + (when.month - start.month)


def bin_time(value: str, binning: TimeBinning) -> int:
    """
    Map a raw time field onto a 0-based step

    Raises:
        ValueError: unparseable value or a step before the origin/anchor or past n_steps
    """
    if binning.mode == BinningMode.MONTHLY:
        step = _month_index(value, binning.anchor)
    else:
        step = (int(value) - binning.origin) // binning.width
    if step < 0:
        raise ValueError(f"time {value!r} precedes the binning origin")
    if binning.n_steps is not None and step >= binning.n_steps:
        raise ValueError(f"time {value!r} falls past step {binning.n_steps - 1}")
    return step


class _Record:
    __slots__ = ("sender", "receiver", "code", "step")

    def __init__(self, sender: str, receiver: str, code: int, step: int):
        self.sender = sender
        self.receiver = receiver
        self.code = code
        self.step = step


def parse_events(
    stream: PathOrStream,
    schema: Optional[ColumnSchema] = None,
    time_binning: Optional[TimeBinning] = None,
    strict: bool = False,
    canonical: bool = False,
) -> Tuple[Vocabulary, Vocabulary, List[EventToken], IngestReport]:
    """
    Parse an event log into country and action vocabularies plus event tokens

    Vocabularies are built in first-appearance order unless `canonical` is set, in which
    case labels are sorted lexicographically before indices are assigned. Action labels
    are the root codes as strings ("1".."20").

    Args:
        stream: path or open text stream with sender, receiver, action and time columns
        schema: column layout; defaults to sender/receiver/action/time tab-separated
        time_binning: how the time column maps onto steps; defaults to pre-binned integers
        strict: raise on the first malformed line instead of recording and skipping it
        canonical: sort vocabularies lexicographically

    Returns:
        (countries, actions, tokens, report)

    Raises:
        DataError: action code outside 1..20, malformed line in strict mode, or no events
    """
    schema = schema or ColumnSchema()
    binning = time_binning or TimeBinning.pre_binned()
    report = IngestReport()
    records: List[_Record] = []

    def reject(line_no: int, reason: str):
        if strict:
            raise DataError(f"line {line_no}: {reason}")
        report.malformed += 1
        report.malformed_lines.append(MalformedLine(line_no=line_no, reason=reason))
        if report.malformed <= MAX_LOGGED_MALFORMED:
            logger.warning(f"Skipping malformed line {line_no}: {reason}")

    with open_text(stream) as handle:
        for line_no, fields in iter_rows(handle, schema.delimiter, schema.comment_prefix):
            report.lines_read += 1
            if fields is None:
                report.comments += 1
                continue
            if len(fields) < schema.width:
                reject(line_no, f"expected at least {schema.width} columns, got {len(fields)}")
                continue
            sender, receiver = fields[schema.sender], fields[schema.receiver]
            if not sender or not receiver:
                reject(line_no, "empty country label")
                continue
            try:
                code = int(fields[schema.action])
            except ValueError:
                reject(line_no, f"action code {fields[schema.action]!r} is not an integer")
                continue
            if not 1 <= code <= N_ACTION_CODES:
                raise DataError(f"line {line_no}: action code {code} outside 1..{N_ACTION_CODES}")
            try:
                step = bin_time(fields[schema.time], binning)
            except ValueError as e:
                reject(line_no, str(e))
                continue
            if sender == receiver:
                report.self_loops += 1
                continue
            records.append(_Record(sender, receiver, code, step))

    if not records:
        raise DataError("no events parsed from input")

    countries, actions = Vocabulary(), Vocabulary()
    for rec in records:
        countries.add(rec.sender)
        countries.add(rec.receiver)
        actions.add(str(rec.code))
    if canonical:
        countries, actions = countries.canonicalized(), actions.canonicalized()

    tokens = [
        EventToken(
            sender=countries.lookup(rec.sender),
            receiver=countries.lookup(rec.receiver),
            action=actions.lookup(str(rec.code)),
            time=rec.step,
        )
        for rec in records
    ]
    report.parsed = len(tokens)
    report.n_steps = binning.n_steps or max(rec.step for rec in records) + 1
    classes = Counter(quadclass_of(rec.code) for rec in records)
    report.quadclass_totals = dict(classes)

    logger.info(
        f"Parsed {report.parsed} events over {len(countries)} countries, "
        f"{len(actions)} actions, {report.n_steps} steps "
        f"(dropped {report.self_loops} self-loops, {report.malformed} malformed)"
    )
    return countries, actions, tokens, report


def tokens_to_arrays(tokens: Tokens) -> TokenArrays:
    if isinstance(tokens, TokenArrays):
        return tokens
    if not tokens:
        empty = np.zeros(0, dtype=np.int64)
        return TokenArrays(empty, empty.copy(), empty.copy(), empty.copy())
    keys = np.array([tok.key() for tok in tokens], dtype=np.int64)
    return TokenArrays(keys[:, 0], keys[:, 1], keys[:, 2], keys[:, 3])


def build_tensor(tokens: Tokens, dims: Tuple[int, int, int, int]) -> CountTensor:
    """
    Aggregate tokens into a sparse V×V×A×T count tensor

    Raises:
        DataError: a token index outside `dims` or a self-loop
    """
    if len(dims) != 4 or dims[0] != dims[1]:
        raise DataError(f"tensor dims must be (V, V, A, T), got {dims}")
    arrays = tokens_to_arrays(tokens)
    subs = np.stack([arrays.sender, arrays.receiver, arrays.action, arrays.time], axis=1)
    if subs.shape[0]:
        if np.any(subs < 0) or np.any(subs >= np.asarray(dims)):
            raise DataError(f"token index out of bounds for dims {tuple(dims)}")
        if np.any(arrays.sender == arrays.receiver):
            raise DataError("self-loop tokens cannot enter a count tensor")
    return CountTensor.from_arrays(dims, subs, np.ones(subs.shape[0], dtype=np.int64))


def snapshot(tensor: CountTensor, t: int) -> List[Tuple[int, int, int, int]]:
    """
    Weighted multinetwork at time step t as (sender, receiver, action, weight) edges

    Raises:
        DataError: t outside 0..T-1
    """
    if not 0 <= t < tensor.dims[3]:
        raise DataError(f"time step {t} outside 0..{tensor.dims[3] - 1}")
    keep = tensor.subs[:, 3] == t
    return [
        (int(s[0]), int(s[1]), int(s[2]), int(c))
        for s, c in zip(tensor.subs[keep], tensor.counts[keep])
    ]


def dump_tensor(tensor: CountTensor, target: PathOrStream) -> int:
    """Canonical sorted-key dump of the nonzero entries: i, j, a, t, count"""
    v, _, a, t = tensor.dims
    rows = ((int(s[0]), int(s[1]), int(s[2]), int(s[3]), int(c)) for s, c in tensor.items())
    return write_rows(target, None, rows, comments=[f"dims\t{v}\t{v}\t{a}\t{t}"])


def load_tensor(source: PathOrStream, dims: Optional[Tuple[int, int, int, int]] = None) -> CountTensor:
    """
    Read a tensor written by `dump_tensor`

    The ``# dims`` header fixes the shape; `dims` overrides it or stands in when the header
    is missing.
    """
    header_dims = None
    subs, counts = [], []
    with open_text(source) as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.lstrip("#").split()
                if parts and parts[0] == "dims":
                    header_dims = tuple(int(p) for p in parts[1:5])
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise DataError(f"tensor line {line_no}: expected 5 columns")
            try:
                values = [int(f) for f in fields]
            except ValueError as e:
                raise DataError(f"tensor line {line_no}: {e}") from e
            if values[4] < 1:
                raise DataError(f"tensor line {line_no}: counts must be positive")
            subs.append(values[:4])
            counts.append(values[4])
    shape = dims or header_dims
    if shape is None:
        raise DataError("tensor dump has no dims header and no dims were given")
    subs_arr = np.array(subs, dtype=np.int64).reshape(-1, 4)
    if subs_arr.shape[0] and (np.any(subs_arr < 0) or np.any(subs_arr >= np.asarray(shape))):
        raise DataError(f"tensor entry out of bounds for dims {shape}")
    return CountTensor.from_arrays(shape, subs_arr, np.array(counts, dtype=np.int64))


def dump_vocabulary(vocab: Vocabulary, target: PathOrStream) -> int:
    return write_rows(target, None, enumerate(vocab.labels))


def load_vocabulary(source: PathOrStream) -> Vocabulary:
    labels = []
    with open_text(source) as handle:
        for line_no, fields in iter_rows(handle):
            if fields is None:
                continue
            if len(fields) != 2 or not fields[0].isdigit() or int(fields[0]) != len(labels):
                raise DataError(f"vocabulary line {line_no}: expected contiguous 'index<TAB>label'")
            labels.append(fields[1])
    if len(set(labels)) != len(labels):
        raise DataError("vocabulary labels must be unique")
    return Vocabulary(labels=labels)

