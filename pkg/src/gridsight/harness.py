"""Training orchestration: metrics-stream supervision, stoppage, comparison.

The adapter contract: the harness launches the adapter command with the run
directory as working directory; the adapter prints exactly one JSON object
per epoch to stdout (fields ``epoch``, ``map50``, ``ap_per_class``,
``seconds``; extra fields tolerated) and polls for a file named ``STOP`` in
the run directory at epoch boundaries, exiting cleanly when it appears.

Run directory layout: ``config`` (JSON), ``history`` (append-only JSONL),
``result`` (JSON), ``artifacts/`` (adapter-owned), ``adapter.log`` (stderr).
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import AdapterCrashed, AdapterTimeout, DuplicateCell, ProtocolViolation

STOP_FILENAME = "STOP"
REQUIRED_RECORD_FIELDS = ("epoch", "map50", "ap_per_class", "seconds")


class StopDecision(Enum):
    CONTINUE = "continue"
    STOP_PATIENCE = "stop_patience"
    STOP_MAX = "stop_max"


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    map50: float
    ap_per_class: dict[str, float]
    seconds: float

    def __post_init__(self):
        if self.epoch < 1:
            raise ProtocolViolation(f"epoch {self.epoch} must be >= 1")
        if not 0.0 <= self.map50 <= 1.0:
            raise ProtocolViolation(f"map50 {self.map50} outside [0, 1]")
        if self.seconds < 0:
            raise ProtocolViolation(f"seconds {self.seconds} must be >= 0")


@dataclass(frozen=True)
class StopPolicy:
    max_epochs: int = 100
    patience: int = 15
    min_delta: float = 0.0  # improvement means map50 > best + min_delta

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")


def best_epoch(history: list[EpochMetrics], min_delta: float = 0.0) -> EpochMetrics | None:
    """Earliest epoch holding the running maximum under the improvement rule."""
    best = None
    for m in history:
        if best is None or m.map50 > best.map50 + min_delta:
            best = m
    return best


def should_stop(history: list[EpochMetrics], policy: StopPolicy) -> StopDecision:
    if not history:
        return StopDecision.CONTINUE
    last = history[-1]
    if last.epoch >= policy.max_epochs:
        return StopDecision.STOP_MAX
    best = best_epoch(history, policy.min_delta)
    if last.epoch - best.epoch >= policy.patience:
        return StopDecision.STOP_PATIENCE
    return StopDecision.CONTINUE


def parse_metrics_line(line: str) -> EpochMetrics:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolViolation(f"metrics line is not a JSON object: {line!r}") from e
    if not isinstance(record, dict):
        raise ProtocolViolation(f"metrics line is not a JSON object: {line!r}")
    missing = [k for k in REQUIRED_RECORD_FIELDS if k not in record]
    if missing:
        raise ProtocolViolation(f"metrics record missing fields {missing}: {line!r}")
    ap = record["ap_per_class"]
    if not isinstance(ap, dict):
        raise ProtocolViolation(f"ap_per_class must be an object: {line!r}")
    try:
        return EpochMetrics(
            epoch=int(record["epoch"]),
            map50=float(record["map50"]),
            ap_per_class={str(k): float(v) for k, v in ap.items()},
            seconds=float(record["seconds"]),
        )
    except (TypeError, ValueError) as e:
        raise ProtocolViolation(f"metrics record has non-numeric fields: {line!r}") from e


@dataclass
class RunConfig:
    run_dir: Path
    model_name: str
    component_name: str
    policy: StopPolicy = field(default_factory=StopPolicy)
    epoch_timeout: float | None = None  # seconds without a record before giving up
    exit_grace: float = 60.0  # wait after STOP before terminating the adapter

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "component_name": self.component_name,
            "max_epochs": self.policy.max_epochs,
            "patience": self.policy.patience,
            "min_delta": self.policy.min_delta,
            "epoch_timeout": self.epoch_timeout,
        }


@dataclass
class TrainRunResult:
    model_name: str
    component_name: str
    best_map50: float
    best_epoch: int
    epochs_run: int
    stop_reason: str  # patience | max_epochs | trainer_exit | error
    epoch_seconds_sum: float
    total_seconds: float  # harness-measured wall time (excluded from replay identity)
    best_ap_per_class: dict[str, float] = field(default_factory=dict)
    adapter_exit_code: int | None = None

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "component_name": self.component_name,
            "best_map50": self.best_map50,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "stop_reason": self.stop_reason,
            "epoch_seconds_sum": self.epoch_seconds_sum,
            "total_seconds": self.total_seconds,
            "best_ap_per_class": self.best_ap_per_class,
            "adapter_exit_code": self.adapter_exit_code,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainRunResult":
        return cls(**data)

    def replay_key(self) -> tuple:
        """Everything a replay must reproduce; wall-clock overhead excluded."""
        return (
            self.model_name,
            self.component_name,
            self.best_map50,
            self.best_epoch,
            self.epochs_run,
            self.stop_reason,
            self.epoch_seconds_sum,
            tuple(sorted(self.best_ap_per_class.items())),
        )


class _LineReader:
    """Background reader so record waits can time out portably."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream):
        for line in stream:
            self._queue.put(line)
        self._queue.put(None)  # EOF marker

    def next_line(self, timeout: float | None):
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            raise AdapterTimeout("no metrics record within the epoch timeout") from None


def run_training(adapter_command: str | list[str], config: RunConfig) -> TrainRunResult:
    """Supervise one adapter run; returns the persisted result.

    Raises AdapterCrashed / ProtocolViolation / AdapterTimeout on failure, after
    persisting the history gathered so far and a result with stop_reason
    ``error``.
    """
    argv = shlex.split(adapter_command) if isinstance(adapter_command, str) else list(adapter_command)
    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "artifacts").mkdir(exist_ok=True)
    stop_file = run_dir / STOP_FILENAME
    if stop_file.exists():
        stop_file.unlink()
    (run_dir / "config").write_text(json.dumps(config.to_dict(), indent=2) + "\n")

    history: list[EpochMetrics] = []
    started = time.monotonic()
    stop_decision: StopDecision | None = None

    with (run_dir / "history").open("w") as history_file, (run_dir / "adapter.log").open("w") as log_file:
        try:
            proc = subprocess.Popen(
                argv,
                cwd=run_dir,
                stdout=subprocess.PIPE,
                stderr=log_file,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise AdapterCrashed(f"failed to launch adapter {argv[0]!r}: {e}") from e
        reader = _LineReader(proc.stdout)
        try:
            while True:
                line = reader.next_line(config.epoch_timeout)
                if line is None:  # adapter closed stdout
                    break
                if not line.strip():
                    continue
                metrics = parse_metrics_line(line)
                if history and metrics.epoch <= history[-1].epoch:
                    raise ProtocolViolation(
                        f"epoch {metrics.epoch} does not increase past {history[-1].epoch}"
                    )
                history.append(metrics)
                history_file.write(json.dumps(_metrics_to_dict(metrics)) + "\n")
                history_file.flush()
                decision = should_stop(history, config.policy)
                if decision is not StopDecision.CONTINUE:
                    stop_decision = decision
                    stop_file.touch()
                    break

            if stop_decision is not None:
                _drain_after_stop(reader, config)
            exit_code = _wait_for_exit(proc, config)
        except Exception:
            proc.kill()
            proc.wait()
            result = _build_result(config, history, "error", started, proc.returncode)
            _persist_result(run_dir, result)
            raise

    if stop_decision is None:
        if not history:
            result = _build_result(config, history, "error", started, exit_code)
            _persist_result(run_dir, result)
            raise ProtocolViolation("adapter exited without emitting any metrics record")
        if exit_code != 0:
            result = _build_result(config, history, "error", started, exit_code)
            _persist_result(run_dir, result)
            raise AdapterCrashed(f"adapter exited with code {exit_code} before a stop was signaled")
        stop_reason = "trainer_exit"
    else:
        stop_reason = "patience" if stop_decision is StopDecision.STOP_PATIENCE else "max_epochs"

    result = _build_result(config, history, stop_reason, started, exit_code)
    _persist_result(run_dir, result)
    return result


def _drain_after_stop(reader: _LineReader, config: RunConfig) -> None:
    # Keep the pipe flowing until the adapter notices STOP and exits; records
    # emitted after the stop decision are not part of the run's history.
    while True:
        try:
            line = reader.next_line(config.exit_grace)
        except AdapterTimeout:
            return
        if line is None:
            return


def _wait_for_exit(proc: subprocess.Popen, config: RunConfig) -> int:
    try:
        return proc.wait(timeout=config.exit_grace)
    except subprocess.TimeoutExpired:
        proc.terminate()
        try:
            return proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()
            return proc.wait()


def _metrics_to_dict(m: EpochMetrics) -> dict:
    return {"epoch": m.epoch, "map50": m.map50, "ap_per_class": m.ap_per_class, "seconds": m.seconds}


def _build_result(
    config: RunConfig,
    history: list[EpochMetrics],
    stop_reason: str,
    started: float,
    exit_code: int | None,
) -> TrainRunResult:
    best = best_epoch(history, config.policy.min_delta)
    return TrainRunResult(
        model_name=config.model_name,
        component_name=config.component_name,
        best_map50=best.map50 if best else 0.0,
        best_epoch=best.epoch if best else 0,
        epochs_run=history[-1].epoch if history else 0,
        stop_reason=stop_reason,
        epoch_seconds_sum=sum(m.seconds for m in history),
        total_seconds=time.monotonic() - started,
        best_ap_per_class=dict(best.ap_per_class) if best else {},
        adapter_exit_code=exit_code,
    )


def _persist_result(run_dir: Path, result: TrainRunResult) -> None:
    (run_dir / "result").write_text(json.dumps(result.to_dict(), indent=2) + "\n")


def load_history(run_dir: str | Path) -> list[EpochMetrics]:
    lines = (Path(run_dir) / "history").read_text().splitlines()
    return [parse_metrics_line(line) for line in lines if line.strip()]


def load_result(path: str | Path) -> TrainRunResult:
    p = Path(path)
    if p.is_dir():
        p = p / "result"
    return TrainRunResult.from_dict(json.loads(p.read_text()))


@dataclass
class ComparisonReport:
    """Grid of best mAP and wall seconds keyed by (model, component)."""

    cells: dict[tuple[str, str], tuple[float, float]]
    models: list[str]  # first-appearance order
    components: list[str]

    def model_averages(self) -> dict[str, tuple[float, float]]:
        out = {}
        for model in self.models:
            # accumulate in sorted key order so results are exactly
            # permutation-invariant over input order
            pairs = [v for (m, c), v in sorted(self.cells.items()) if m == model]
            out[model] = (
                sum(p[0] for p in pairs) / len(pairs),
                sum(p[1] for p in pairs) / len(pairs),
            )
        return out

    def component_averages(self) -> dict[str, float]:
        out = {}
        for comp in self.components:
            pairs = [v for (m, c), v in sorted(self.cells.items()) if c == comp]
            out[comp] = sum(p[0] for p in pairs) / len(pairs)
        return out


def compare(results: list[TrainRunResult]) -> ComparisonReport:
    if not results:
        raise ValueError("no results to compare")
    cells: dict[tuple[str, str], tuple[float, float]] = {}
    models: list[str] = []
    components: list[str] = []
    for r in results:
        key = (r.model_name, r.component_name)
        if key in cells:
            raise DuplicateCell(f"duplicate run for model={key[0]!r} component={key[1]!r}")
        cells[key] = (r.best_map50, r.total_seconds)
        if r.model_name not in models:
            models.append(r.model_name)
        if r.component_name not in components:
            components.append(r.component_name)
    return ComparisonReport(cells=cells, models=models, components=components)


def render_model_table(report: ComparisonReport) -> str:
    """Per-model averages: best mAP@50 and total training seconds."""
    headers = ("Model", "Average mAP@50", "Average Efficiency (Total Training Time) (s)")
    rows = [
        (model, f"{avg_map:.3f}", f"{avg_secs:.2f}")
        for model, (avg_map, avg_secs) in report.model_averages().items()
    ]
    return _render_table(headers, rows)


def render_component_table(report: ComparisonReport) -> str:
    """Per-component average of best mAP@50 across models."""
    headers = ("Component", "Average mAP@50")
    rows = [(comp, f"{avg:.3f}") for comp, avg in report.component_averages().items()]
    return _render_table(headers, rows)


def render_cell_table(report: ComparisonReport) -> str:
    headers = ("Model", "Component", "Best mAP@50", "Total Training Time (s)")
    rows = [
        (model, comp, f"{report.cells[(model, comp)][0]:.3f}", f"{report.cells[(model, comp)][1]:.2f}")
        for model in report.models
        for comp in report.components
        if (model, comp) in report.cells
    ]
    return _render_table(headers, rows)


def _render_table(headers: tuple[str, ...], rows: list[tuple[str, ...]]) -> str:
    widths = [
        max(len(headers[i]), max((len(r[i]) for r in rows), default=0)) for i in range(len(headers))
    ]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip()]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"
