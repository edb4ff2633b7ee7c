"""
Trace Logger Service
Records one line per saved sample of a sampler run and mirrors it to the standard logger
"""
import logging
from collections import deque
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional, Tuple

from src.utils.tsv import format_value

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("model", "iteration", "log_likelihood", "eff_dims", "delta", "zeta")


class TraceEntry:
    """A single saved-sample record"""

    def __init__(
        self,
        model: str,
        iteration: int,
        log_likelihood: float,
        eff_dims: Optional[Tuple[int, int, int]] = None,
        delta: Optional[float] = None,
        zeta: Optional[float] = None,
    ):
        self.model = model
        self.iteration = iteration
        self.log_likelihood = log_likelihood
        self.eff_dims = eff_dims
        self.delta = delta
        self.zeta = zeta

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "iteration": self.iteration,
            "log_likelihood": self.log_likelihood,
            "eff_dims": self.eff_dims,
            "delta": self.delta,
            "zeta": self.zeta,
        }

    def to_row(self) -> List[str]:
        dims = ",".join(str(d) for d in self.eff_dims) if self.eff_dims else "NA"
        return [
            self.model,
            str(self.iteration),
            format_value(float(self.log_likelihood)),
            dims,
            "NA" if self.delta is None else format_value(float(self.delta)),
            "NA" if self.zeta is None else format_value(float(self.zeta)),
        ]


class TraceLogger:
    """
    Appends trace entries to a TSV file

    Entries are also kept in memory (the most recent `max_entries`) for callers that
    inspect a run without re-reading the file.
    """

    def __init__(self, path: Optional[Path] = None, max_entries: int = 10_000):
        self.path = Path(path) if path is not None else None
        self.entries: Deque[TraceEntry] = deque(maxlen=max_entries)
        self._handle = None

    def __enter__(self) -> "TraceLogger":
        self.open()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def open(self) -> None:
        if self.path is None or self._handle is not None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w", encoding="utf-8", newline="")
        self._handle.write("\t".join(TRACE_COLUMNS) + "\n")

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def log(self, entry: TraceEntry) -> None:
        """Record an entry and write it through to the trace file"""
        self.entries.append(entry)
        if self._handle is not None:
            self._handle.write("\t".join(entry.to_row()) + "\n")
            self._handle.flush()
        logger.info(
            f"[{entry.model}] sweep {entry.iteration}: log-lik {entry.log_likelihood:.4f}"
            + (f", effective dims {entry.eff_dims}" if entry.eff_dims else "")
        )

    def get_entries(self, limit: Optional[int] = None) -> List[Dict[str, Any]]:
        items = list(self.entries)
        if limit:
            items = items[-limit:]
        return [e.to_dict() for e in items]
