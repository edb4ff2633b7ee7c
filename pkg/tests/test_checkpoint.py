"""
Test suite for binary checkpoints, the sample trace and TSV value formatting
"""
import numpy as np
import pytest

from src.core.errors import DataError
from src.models.params import BPTDState
from src.services.trace_logger import TRACE_COLUMNS, TraceEntry, TraceLogger
from src.utils.checkpoint import MAGIC, read_checkpoint, write_checkpoint
from src.utils.tsv import format_value, write_rows


class TestCheckpoint:
    """Versioned checkpoint files"""

    def test_state_round_trip(self, tiny_state, tiny_dims, temp_dir):
        path = write_checkpoint(temp_dir / "state.ckpt", "bptd", tiny_dims.model_dump(), tiny_state.to_arrays())
        model, dims, arrays = read_checkpoint(path)
        assert model == "bptd"
        assert dims["n_communities"] == 2
        assert list(arrays) == list(tiny_state.to_arrays())
        restored = BPTDState.from_arrays(arrays)
        assert np.array_equal(restored.theta, tiny_state.theta)
        assert restored.zeta == tiny_state.zeta

    def test_bytes_are_deterministic(self, tiny_state, tiny_dims, temp_dir):
        a = write_checkpoint(temp_dir / "a.ckpt", "bptd", tiny_dims.model_dump(), tiny_state.to_arrays())
        b = write_checkpoint(temp_dir / "b.ckpt", "bptd", tiny_dims.model_dump(), tiny_state.to_arrays())
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes().startswith(MAGIC)

    def test_scalar_array(self, temp_dir):
        path = write_checkpoint(temp_dir / "s.ckpt", "x", {}, {"value": np.float64(2.5)})
        assert read_checkpoint(path)[2]["value"] == 2.5

    def test_wrong_magic(self, temp_dir):
        path = temp_dir / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 8)
        with pytest.raises(DataError):
            read_checkpoint(path)

    def test_truncated(self, tiny_state, tiny_dims, temp_dir):
        path = write_checkpoint(temp_dir / "t.ckpt", "bptd", tiny_dims.model_dump(), tiny_state.to_arrays())
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataError):
            read_checkpoint(path)

    def test_missing(self, temp_dir):
        with pytest.raises(DataError):
            read_checkpoint(temp_dir / "none.ckpt")


class TestTrace:
    def test_row_formatting(self):
        row = TraceEntry("bptd", 10, -12.5, (3, 2, 1), 1.0, None).to_row()
        assert row[:2] == ["bptd", "10"]
        assert row[3] == "3,2,1"
        assert row[5] == "NA"

    def test_file_output(self, temp_dir):
        path = temp_dir / "trace.tsv"
        with TraceLogger(path) as trace:
            trace.log(TraceEntry("gpirm", 5, -3.0))
            trace.log(TraceEntry("gpirm", 10, -2.0))
        lines = path.read_text().splitlines()
        assert lines[0].split("\t") == list(TRACE_COLUMNS)
        assert len(lines) == 3
        assert lines[2].split("\t")[3] == "NA"

    def test_memory_only(self):
        trace = TraceLogger(max_entries=2)
        for it in range(3):
            trace.log(TraceEntry("bptf", it, 0.0))
        assert [e["iteration"] for e in trace.get_entries()] == [1, 2]
        assert trace.get_entries(limit=1)[0]["iteration"] == 2


class TestFormatting:
    @pytest.mark.parametrize("value,text", [
        (np.float64(0.1), "0.1"),
        (np.float32(0.5), "0.5"),
        (np.int64(3), "3"),
        (0.25, "0.25"),
        (7, "7"),
        ("USA", "USA"),
    ])
    def test_format_value(self, value, text):
        assert format_value(value) == text

    def test_numpy_rows_read_back(self, temp_dir):
        path = temp_dir / "rows.tsv"
        values = np.array([0.1, 1.0 / 3.0])
        write_rows(path, ("name", "value"), [("a", values[0]), ("b", values[1])])
        lines = path.read_text().splitlines()
        assert lines[1] == "a\t0.1"
        assert float(lines[2].split("\t")[1]) == values[1]
