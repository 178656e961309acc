"""Time and memory benchmarks over the tasks, with CSV/markdown reports.

Per-sample times come from a monotonic clock around the train and test
sample loops.  Memory is the process's peak resident set size, sampled by a
background thread every 100 ms, so it is an upper bound on what the run
itself allocated rather than an allocator-exact figure.
"""

import csv
import io
import json
import threading
import time
from dataclasses import asdict, dataclass, field

import psutil

from nesy import tasks
from nesy.tasks import common

REPORT_COLUMNS = ("task", "mode", "train_ms_per_sample", "test_ms_per_sample", "peak_mem_mb", "runs")
DEFAULT_RUNS = 5
SAMPLE_INTERVAL = 0.1
MEMORY_NOTE = "peak_mem_mb is peak process RSS sampled every 100 ms"


class MemorySampler:
    """Context manager recording peak RSS (MB) of this process."""

    def __init__(self, interval=SAMPLE_INTERVAL):
        self.interval = interval
        self.samples = []  # append-only; read after the thread stops
        self._stop = threading.Event()
        self._thread = None
        self._proc = psutil.Process()

    def _sample(self):
        self.samples.append(self._proc.memory_info().rss / (1024.0 * 1024.0))

    def _loop(self):
        while not self._stop.wait(self.interval):
            self._sample()

    def __enter__(self):
        self._sample()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self._sample()
        return False

    @property
    def peak_mb(self):
        return max(self.samples) if self.samples else 0.0


@dataclass
class ReportRow:
    task: str
    mode: str
    train_ms_per_sample: float
    test_ms_per_sample: float
    peak_mem_mb: float
    runs: int


@dataclass
class BenchRecord:
    task: str
    mode: str
    train_ms_per_sample: float
    test_ms_per_sample: float
    peak_mem_mb: float
    runs: int
    metrics: dict = field(default_factory=dict)
    seed: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        if min(self.train_ms_per_sample, self.test_ms_per_sample, self.peak_mem_mb) < 0:
            raise ValueError("bench times and memory must be non-negative")

    def row(self) -> ReportRow:
        return ReportRow(*(getattr(self, c) for c in REPORT_COLUMNS))


def mode_label(config):
    return f"{config.interplay}[{config.semiring}]"


def bench_task(config, runs=DEFAULT_RUNS) -> BenchRecord:
    """Train and evaluate ``runs`` times; times, memory and metrics are averaged."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    module = tasks.get(config.task)
    config = common.resolve(config, **module.DEFAULTS)
    train_ms, test_ms, peaks, metric_runs = [], [], [], []
    for _ in range(runs):
        with MemorySampler() as mem:
            result = common.run_task(module, config)
        train_ms.append(result.metrics["train_ms_per_sample"])
        test_ms.append(result.metrics["test_ms_per_sample"])
        peaks.append(mem.peak_mb)
        metric_runs.append(result.metrics)
    metrics = {}
    for key, value in metric_runs[0].items():
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            metrics[key] = sum(m[key] for m in metric_runs) / runs
    return BenchRecord(config.task, mode_label(config), sum(train_ms) / runs, sum(test_ms) / runs,
                       sum(peaks) / runs, runs, metrics, config.seed, time.time())


# -- reports ---------------------------------------------------------------------

def to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for rec in records:
        row = rec.row() if isinstance(rec, BenchRecord) else rec
        # repr keeps every float bit so the table parses back exactly
        writer.writerow([row.task, row.mode, repr(float(row.train_ms_per_sample)),
                         repr(float(row.test_ms_per_sample)), repr(float(row.peak_mem_mb)), row.runs])
    return buf.getvalue()


def from_csv(text) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != REPORT_COLUMNS:
        raise ValueError(f"unexpected report header {header!r}")
    return [ReportRow(r[0], r[1], float(r[2]), float(r[3]), float(r[4]), int(r[5])) for r in reader if r]


def to_markdown(records) -> str:
    lines = [f"<!-- {MEMORY_NOTE} -->",
             "| " + " | ".join(REPORT_COLUMNS) + " |",
             "|" + "|".join("---" for _ in REPORT_COLUMNS) + "|"]
    for rec in records:
        r = rec.row() if isinstance(rec, BenchRecord) else rec
        lines.append(f"| {r.task} | {r.mode} | {r.train_ms_per_sample:.3f} | {r.test_ms_per_sample:.3f} "
                     f"| {r.peak_mem_mb:.1f} | {r.runs} |")
    return "\n".join(lines) + "\n"


def to_jsonl(records) -> str:
    return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in records)


def from_jsonl(text) -> list:
    return [BenchRecord(**json.loads(line)) for line in text.splitlines() if line.strip()]
