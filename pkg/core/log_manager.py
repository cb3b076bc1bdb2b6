"""
Log management for diffem runs
"""

import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Union

import orjson
import structlog

from config import Config
from models.log import SessionSummary, SystemLog, TraceRecord

_CONFIGURED = False


def configure_logging(level: Optional[str] = None) -> None:
    """structlog を stdlib logging に載せて初期化する（何度呼んでもよい）"""
    global _CONFIGURED
    level_name = (level or Config.LOG_LEVEL).upper()
    logging.basicConfig(level=getattr(logging, level_name), format=Config.LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, level_name))
    if _CONFIGURED:
        return
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.KeyValueRenderer(key_order=["event"], sort_keys=True),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )
    _CONFIGURED = True


def write_jsonl(path: Union[str, Path], rows: Iterable[Dict], append: bool = False) -> Path:
    """辞書の列を JSONL で書き込む"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "ab" if append else "wb") as f:
        for row in rows:
            f.write(orjson.dumps(row, option=orjson.OPT_SERIALIZE_NUMPY) + b"\n")
    return path


def read_jsonl(path: Union[str, Path]) -> Iterator[Dict]:
    """JSONL を 1 行ずつ読み込む（空行は無視）"""
    with open(path, "rb") as f:
        for line_num, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield orjson.loads(line)
            except orjson.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_num}: invalid JSON record: {e}")


class RunLogManager:
    """実行ごとのセッションログ（trace / events / system.log / summary）"""

    def __init__(self, output_dir: Union[str, Path], command: str = "run", session_id: Optional[str] = None):
        self.output_dir = Path(output_dir)
        self.log_dir = Config.get_log_dir(self.output_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)

        self.command = command
        self.session_id = session_id or datetime.now().strftime("%Y%m%d_%H%M%S")
        self.start_time = datetime.now()
        self.trace_records: List[TraceRecord] = []
        self.system_logs: List[SystemLog] = []
        self.artifacts: List[str] = []
        self.items_total = 0
        self.items_failed = 0

        # ロガーを先に初期化
        self.logger = structlog.get_logger(__name__)

        self.setup_log_files()

    def setup_log_files(self):
        """ログファイルの初期化"""
        self.session_dir = self.log_dir / f"session_{self.session_id}"
        self.session_dir.mkdir(parents=True, exist_ok=True)

        self.trace_file = self.session_dir / "trace.jsonl"
        self.events_file = self.session_dir / "events.jsonl"
        self.system_log_file = self.session_dir / "system.log"
        self.summary_file = self.session_dir / "session_summary.json"

        # システムログファイルハンドラー設定
        self._file_handler = logging.FileHandler(self.system_log_file)
        self._file_handler.setLevel(logging.DEBUG)
        self._file_handler.setFormatter(logging.Formatter(Config.LOG_FORMAT))
        logging.getLogger().addHandler(self._file_handler)

        self.logger.info("session_started", session_id=self.session_id, command=self.command)

    def log_trace(self, record: TraceRecord):
        """トレース記録を追記"""
        self.trace_records.append(record)
        write_jsonl(self.trace_file, [record.to_dict()], append=True)

    def log_item(self, success: bool):
        """バッチ項目の成否を数える"""
        self.items_total += 1
        if not success:
            self.items_failed += 1

    def log_artifact(self, path: Union[str, Path]):
        self.artifacts.append(str(path))

    def log_system_event(self, level: str, component: str, message: str, details: Dict = None):
        """システムイベントログ"""
        system_log = SystemLog(
            timestamp=datetime.now(),
            level=level,
            component=component,
            message=message,
            details=details or {}
        )
        self.system_logs.append(system_log)
        write_jsonl(self.events_file, [system_log.to_dict()], append=True)

        # 標準ログにも出力
        if level == "error":
            self.logger.error(message, component=component, **(details or {}))
        elif level == "warning":
            self.logger.warning(message, component=component, **(details or {}))
        else:
            self.logger.info(message, component=component, **(details or {}))

    def generate_session_summary(self) -> SessionSummary:
        """セッション全体のサマリー生成"""
        summary = SessionSummary(
            session_id=self.session_id,
            command=self.command,
            start_time=self.start_time,
            end_time=datetime.now(),
            total_items=self.items_total,
            successful_items=self.items_total - self.items_failed,
            failed_items=self.items_failed,
            trace_records=len(self.trace_records),
            artifacts=list(self.artifacts),
            error_count=len([log for log in self.system_logs if log.level == "error"]),
        )
        self.summary_file.write_bytes(orjson.dumps(summary.to_dict(), option=orjson.OPT_INDENT_2))
        return summary

    def close(self) -> SessionSummary:
        """サマリーを書き出してファイルハンドラーを外す"""
        summary = self.generate_session_summary()
        logging.getLogger().removeHandler(self._file_handler)
        self._file_handler.close()
        return summary

    def print_session_summary(self):
        """セッションサマリーの表示"""
        summary = self.generate_session_summary()

        print("\n" + "=" * 60)
        print("📊 SESSION SUMMARY")
        print("=" * 60)
        print(f"Session ID: {summary.session_id}")
        print(f"Command: {summary.command}")
        print(f"Duration: {summary.duration_seconds:.1f} seconds")
        if summary.total_items:
            print(f"Items: {summary.successful_items}/{summary.total_items} successful")
            print(f"Success Rate: {summary.success_rate:.1%}")
        print(f"Trace records: {summary.trace_records}")
        print(f"Artifacts: {len(summary.artifacts)} files written")

        if summary.failed_items > 0:
            print(f"⚠️  Failed items: {summary.failed_items}")

    def get_logs_summary_dict(self) -> Dict[str, str]:
        """ログファイルの場所"""
        return {
            "session_dir": str(self.session_dir),
            "trace_file": str(self.trace_file),
            "events_file": str(self.events_file),
            "system_log_file": str(self.system_log_file),
            "summary_file": str(self.summary_file),
        }
