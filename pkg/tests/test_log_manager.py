import orjson
import pytest

from core.log_manager import RunLogManager, configure_logging, read_jsonl, write_jsonl
from models.log import TraceRecord


@pytest.fixture
def manager(tmp_path):
    configure_logging("INFO")
    m = RunLogManager(tmp_path, command="deblur", session_id="test")
    yield m
    m.close()


def test_session_layout(manager, tmp_path):
    assert manager.session_dir == tmp_path / "logs" / "session_test"
    files = manager.get_logs_summary_dict()
    assert files["trace_file"].endswith("trace.jsonl")


def test_trace_records_are_appended(manager):
    manager.log_trace(TraceRecord(algo="fastem", step=10, data_fit=1.5))
    manager.log_trace(TraceRecord(algo="fastem", step=0, data_fit=0.5, log_marginal=-3.0))
    rows = list(read_jsonl(manager.trace_file))
    assert [r["step"] for r in rows] == [10, 0]
    assert rows[1]["log_marginal"] == -3.0


def test_summary_counts_items_and_errors(manager):
    manager.log_item(True)
    manager.log_item(False)
    manager.log_system_event("error", "benchmark", "item_failed", {"item": "b"})
    manager.log_artifact("report.jsonl")
    summary = manager.generate_session_summary()
    assert summary.total_items == 2
    assert summary.failed_items == 1
    assert summary.success_rate == 0.5
    assert summary.error_count == 1
    data = orjson.loads(manager.summary_file.read_bytes())
    assert data["command"] == "deblur"
    assert data["artifacts"] == ["report.jsonl"]
    events = list(read_jsonl(manager.events_file))
    assert events[0]["details"] == {"item": "b"}


def test_jsonl_round_trip(tmp_path):
    path = write_jsonl(tmp_path / "rows.jsonl", [{"a": 1}, {"a": 2}])
    write_jsonl(path, [{"a": 3}], append=True)
    assert [r["a"] for r in read_jsonl(path)] == [1, 2, 3]


def test_invalid_jsonl_line_is_reported(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_bytes(b'{"a": 1}\n\n{oops\n')
    with pytest.raises(ValueError, match=":3: invalid JSON record"):
        list(read_jsonl(path))
