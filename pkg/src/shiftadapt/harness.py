"""Experiment orchestration, summary statistics and deterministic file output.

An experiment is described by a TOML file::

    seeds = [0, 1, 2, 3, 4]
    output_dir = "results"          # optional
    baselines = ["base_ol", "oracle_restart", "single_resolution:*"]

    [stream]
    T = 64
    n = 100
    m = 50
    K = 4
    D = 2
    drift = "piecewise"             # or "rotating"
    boundaries = [17, 33, 49]
    means = "permuted"              # or an explicit (segments, K, D) array
    scale = 2.0
    noise = 0.5

    [learner]
    kind = "logistic_sgd"
    lr = 0.02
    epochs = 1

    [awe]
    slack = 0.1

``single_resolution:i`` adds one resolution; ``single_resolution:*`` adds all
of them. Every method of a seed consumes the same list of batches.
"""

from __future__ import annotations

import csv
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from .awe import AWE, AweConfig, RoundMetrics
from .baselines import BASELINE_KINDS, BaselineSpec
from .intervals import Horizon
from .learners import KINDS, LearnerSpec
from .streams import PiecewiseDrift, RotatingDrift, RoundBatch, StreamSpec, generate, permuted_segments

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUTPUT_ENV = "SHIFTADAPT_OUTPUT_DIR"
DEFAULT_OUTPUT = "results"
PER_ROUND_COLUMNS = ("method", "seed", "t", "accuracy", "window_rounds", "active_size", "model_id")
SUMMARY_COLUMNS = (
    "method",
    "seeds",
    "mean_accuracy",
    "mean_diff_pp",
    "stderr_pp",
    "single_seed",
    "wins",
    "draws",
    "losses",
    "mean_regret",
)


class ConfigError(ValueError):
    """A config file that does not match the documented schema."""


@dataclass(frozen=True)
class StreamConfig:
    """Seed-independent description of a synthetic stream.

    With ``means = "permuted"`` every seed draws its own relabelling of one
    set of cluster centres per segment (see :func:`permuted_segments`).
    """

    T: int = 64
    n: int = 100
    m: int = 50
    K: int = 4
    D: int = 2
    drift: str = "piecewise"
    boundaries: tuple[int, ...] = (17, 33, 49)
    means: Union[str, tuple] = "permuted"
    scale: float = 2.0
    noise: float = 1.0
    velocity: float = math.pi / 32
    radius: float = 2.0

    def __post_init__(self):
        if self.drift not in ("piecewise", "rotating"):
            raise ConfigError(f"stream.drift must be 'piecewise' or 'rotating', got {self.drift!r}")
        if isinstance(self.means, str) and self.means != "permuted":
            raise ConfigError("stream.means must be 'permuted' or an explicit array")
        if self.scale <= 0:
            raise ConfigError("stream.scale must be positive")
        # Validates the remaining fields through StreamSpec.
        try:
            self.build(0)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"stream: {exc}") from None

    def build(self, seed: int) -> StreamSpec:
        if self.drift == "rotating":
            drift = RotatingDrift(self.velocity, self.radius, self.noise)
        else:
            if isinstance(self.means, str):
                if self.D != 2:
                    raise ConfigError("stream.means = 'permuted' places centres in the plane; it needs D = 2")
                means = permuted_segments(self.K, len(self.boundaries) + 1, seed, self.scale)
            else:
                means = np.asarray(self.means, dtype=float)
            drift = PiecewiseDrift(self.boundaries, means, self.noise)
        return StreamSpec(self.T, self.n, self.m, self.K, self.D, drift, seed)


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamConfig
    awe: AweConfig
    baselines: tuple[BaselineSpec, ...]
    seeds: tuple[int, ...]
    output_dir: Optional[str] = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.awe.T != self.stream.T:
            raise ConfigError("AWE horizon differs from the stream's T")
        if (self.awe.learner.K, self.awe.learner.D) != (self.stream.K, self.stream.D):
            raise ConfigError("learner K/D differ from the stream's K/D")
        names = [b.name for b in self.baselines]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate baselines in {names}")

    @property
    def methods(self) -> list[str]:
        return ["awe"] + [b.name for b in self.baselines]

    def with_seeds(self, seeds: Sequence[int]) -> "ExperimentConfig":
        return ExperimentConfig(self.stream, self.awe, self.baselines, tuple(seeds), self.output_dir)

    def with_baselines(self, baselines: Sequence[BaselineSpec]) -> "ExperimentConfig":
        return ExperimentConfig(self.stream, self.awe, tuple(baselines), self.seeds, self.output_dir)


def _take(table: dict, allowed: Iterable[str], where: str) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    allowed = set(allowed)
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")
    return dict(table)


def _check_types(values: dict, types: dict, where: str) -> None:
    for key, value in values.items():
        expected = types[key]
        ok = isinstance(value, expected) and not (isinstance(value, bool) and bool not in _as_tuple(expected))
        if not ok:
            raise ConfigError(f"{where}.{key} has type {type(value).__name__}")


def _as_tuple(t) -> tuple:
    return t if isinstance(t, tuple) else (t,)


_NUM = (int, float)
_STREAM_TYPES = {
    "T": int, "n": int, "m": int, "K": int, "D": int, "drift": str, "boundaries": list,
    "means": (str, list), "scale": _NUM, "noise": _NUM, "velocity": _NUM, "radius": _NUM,
}
_LEARNER_TYPES = {"kind": str, "lr": _NUM, "epochs": int, "init_scale": _NUM}
_AWE_TYPES = {
    "delta": _NUM, "p": _NUM, "slack": _NUM, "ensemble_mode": str, "weight_floor": bool,
    "retention": int, "check_invariants": bool,
}


def parse_baselines(items: Sequence[str], T: int) -> tuple[BaselineSpec, ...]:
    """Expand ``["base_ol", "single_resolution:2", "single_resolution:*"]`` into specs."""
    out: list[BaselineSpec] = []
    M = Horizon(T).M
    for item in items:
        if not isinstance(item, str):
            raise ConfigError(f"baseline entries must be strings, got {item!r}")
        kind, _, arg = item.partition(":")
        if kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline {kind!r}; expected one of {', '.join(BASELINE_KINDS)}")
        if kind == "single_resolution":
            if arg == "*":
                out.extend(BaselineSpec(kind, i) for i in range(1, M + 1))
                continue
            try:
                i = int(arg)
            except ValueError:
                raise ConfigError(f"single_resolution needs ':i' or ':*', got {item!r}") from None
            if not 1 <= i <= M:
                raise ConfigError(f"{item}: resolution outside [1, {M}]")
            out.append(BaselineSpec(kind, i))
        elif arg:
            raise ConfigError(f"baseline {kind!r} takes no argument")
        else:
            out.append(BaselineSpec(kind))
    return tuple(out)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a parsed TOML document and build the config."""
    top = _take(raw, ("seeds", "output_dir", "baselines", "stream", "learner", "awe"), "top level")
    if "stream" not in top:
        raise ConfigError("missing [stream] table")
    stream_raw = _take(top["stream"], _STREAM_TYPES, "stream")
    _check_types(stream_raw, _STREAM_TYPES, "stream")
    if "boundaries" in stream_raw:
        stream_raw["boundaries"] = tuple(stream_raw["boundaries"])
    if isinstance(stream_raw.get("means"), list):
        stream_raw["means"] = tuple(map(lambda s: tuple(map(tuple, s)), stream_raw["means"]))
    stream = StreamConfig(**stream_raw)

    learner_raw = _take(top.get("learner", {}), _LEARNER_TYPES, "learner")
    _check_types(learner_raw, _LEARNER_TYPES, "learner")
    if learner_raw.get("kind", "logistic_sgd") not in KINDS:
        raise ConfigError(f"learner.kind must be one of {', '.join(KINDS)}")
    try:
        learner = LearnerSpec(K=stream.K, D=stream.D, **learner_raw)
    except ValueError as exc:
        raise ConfigError(f"learner: {exc}") from None

    awe_raw = _take(top.get("awe", {}), _AWE_TYPES, "awe")
    _check_types(awe_raw, _AWE_TYPES, "awe")
    try:
        awe = AweConfig(T=stream.T, learner=learner, **awe_raw)
    except ValueError as exc:
        raise ConfigError(f"awe: {exc}") from None

    seeds = top.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds must be a list of integers")
    baselines = top.get("baselines", ["base_ol", "oracle_restart"])
    if not isinstance(baselines, list):
        raise ConfigError("baselines must be a list of strings")
    specs = parse_baselines(baselines, stream.T)
    if "base_ol" not in [b.name for b in specs]:
        specs = (BaselineSpec("base_ol"),) + specs
    out = top.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir must be a string")
    return ExperimentConfig(stream, awe, specs, tuple(seeds), out)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    with path.open("rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        return config_from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# Benchmark learner and noise level; see the README for the sweep behind them.
ACCEPTANCE_NOISE = 0.5
ACCEPTANCE_LR = 0.02
ACCEPTANCE_EPOCHS = 1


def acceptance_config(seeds: Sequence[int] = (0, 1, 2, 3, 4)) -> ExperimentConfig:
    """The synthetic benchmark used by the acceptance suite."""
    return config_from_dict(
        {
            "seeds": list(seeds),
            "baselines": ["base_ol", "oracle_restart"],
            "stream": {
                "T": 64, "n": 100, "m": 50, "K": 4, "D": 2, "drift": "piecewise",
                "boundaries": [17, 33, 49], "means": "permuted", "scale": 2.0, "noise": ACCEPTANCE_NOISE,
            },
            "learner": {"kind": "logistic_sgd", "lr": ACCEPTANCE_LR, "epochs": ACCEPTANCE_EPOCHS},
            "awe": {"slack": 0.1},
        }
    )


@dataclass(frozen=True)
class Record:
    method: str
    seed: int
    t: int
    accuracy: float
    window_rounds: int
    active_size: int
    model_id: str


@dataclass
class MetricsLog:
    """Per-round records of every (method, seed) pairing, in run order."""

    T: int
    records: list[Record] = field(default_factory=list)

    def add(self, method: str, seed: int, metrics: Sequence[RoundMetrics]) -> None:
        for m in metrics:
            if not 0.0 <= m.accuracy <= 1.0:
                raise ValueError(f"accuracy {m.accuracy} outside [0, 1]")
            self.records.append(
                Record(method, seed, m.t, m.accuracy, m.window_rounds, m.active_size, m.model_id)
            )

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.records))

    @property
    def seeds(self) -> list[int]:
        return list(dict.fromkeys(r.seed for r in self.records))

    def accuracies(self, method: str) -> np.ndarray:
        """``(seeds, T)`` accuracy matrix; raises if any round is missing."""
        seeds = self.seeds
        out = np.full((len(seeds), self.T), np.nan)
        row = {s: i for i, s in enumerate(seeds)}
        for r in self.records:
            if r.method == method:
                if not 1 <= r.t <= self.T:
                    raise ValueError(f"{method} seed {r.seed}: round {r.t} outside [1, {self.T}]")
                out[row[r.seed], r.t - 1] = r.accuracy
        if np.isnan(out).any():
            missing = [(seeds[i], t + 1) for i, t in zip(*np.nonzero(np.isnan(out)))][:3]
            raise ValueError(f"incomplete log for {method}: missing (seed, t) such as {missing}")
        return out

    def diff_series(self, method: str, reference: str = "base_ol") -> np.ndarray:
        """Per-seed, per-round accuracy difference to ``reference`` in percentage points."""
        return 100.0 * (self.accuracies(method) - self.accuracies(reference))


def win_draw_lose(diffs: Iterable[float]) -> tuple[int, int, int]:
    d = np.asarray(list(diffs), dtype=float)
    return int(np.sum(d > 0)), int(np.sum(d == 0)), int(np.sum(d < 0))


def mean_and_stderr(per_seed: Sequence[float]) -> tuple[float, float, bool]:
    """Mean over seeds and its standard error; one seed gives stderr 0 and the flag set."""
    v = np.asarray(per_seed, dtype=float)
    if v.size == 0:
        raise ValueError("no seeds")
    if v.size == 1:
        return float(v[0]), 0.0, True
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), False


@dataclass(frozen=True)
class SummaryRow:
    method: str
    seeds: int
    mean_accuracy: float
    mean_diff_pp: float
    stderr_pp: float
    single_seed: bool
    wins: int
    draws: int
    losses: int
    mean_regret: float

    def values(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


def summarize(log: MetricsLog, reference: str = "base_ol", oracle: str = "oracle_restart") -> list[SummaryRow]:
    """Per-method summary against ``reference``.

    Win/draw/lose counts are pooled over seeds (``wins + draws + losses =
    T * seeds``). ``mean_regret`` is the per-seed sum over rounds of
    ``accuracy(oracle) - accuracy(method)``, averaged over seeds; NaN when the
    log has no oracle run.
    """
    methods = log.methods
    if reference not in methods:
        raise ValueError(f"summary needs a {reference} run in the log")
    oracle_acc = log.accuracies(oracle) if oracle in methods else None
    rows = []
    for method in methods:
        acc = log.accuracies(method)
        diffs = log.diff_series(method, reference)
        mean, se, single = mean_and_stderr(diffs.mean(axis=1))
        w, d, l = win_draw_lose(diffs.ravel())
        regret = float(np.mean((oracle_acc - acc).sum(axis=1))) if oracle_acc is not None else math.nan
        rows.append(SummaryRow(method, acc.shape[0], float(acc.mean()), mean, se, single, w, d, l, regret))
    return rows


def build_methods(config: ExperimentConfig, seed: int) -> list:
    methods = [AWE(config.awe, seed)]
    methods.extend(b.build(config.awe, seed) for b in config.baselines)
    return methods


def run_experiment(
    config: ExperimentConfig,
    batches: Optional[Sequence[RoundBatch]] = None,
) -> MetricsLog:
    """Run AWE and every baseline for each seed on shared batches.

    Without ``batches`` each seed generates its own stream from
    ``config.stream``; with ``batches`` (e.g. from :func:`load_stream`) every
    seed reuses them and the seed only affects learner initialisation.
    """
    T = len(batches) if batches is not None else config.stream.T
    if T != config.awe.T:
        raise ConfigError(f"stream has {T} rounds but AWE is configured for T={config.awe.T}")
    if batches is not None and any(b.distribution_id is None for b in batches):
        if any(b.kind == "oracle_restart" for b in config.baselines):
            raise ConfigError("oracle_restart needs a 'segment' field on every stream record")
    log = MetricsLog(T)
    for seed in config.seeds:
        data = list(batches) if batches is not None else generate(config.stream.build(seed))
        for method in build_methods(config, seed):
            log.add(method.name, seed, [method.step(b) for b in data])
    return log


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".6g")
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def emit(log: MetricsLog, directory: Union[str, Path], svg: bool = False) -> list[Path]:
    """Write ``per_round.csv``, ``summary.csv`` and optionally ``diff.svg``.

    Rows follow the log's run order; numbers use ``%.6g``. An empty log
    yields header-only CSVs.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    per_round = directory / "per_round.csv"
    summary = directory / "summary.csv"
    _write_csv(
        per_round,
        PER_ROUND_COLUMNS,
        ((r.method, r.seed, r.t, r.accuracy, r.window_rounds, r.active_size, r.model_id) for r in log.records),
    )
    rows = summarize(log) if log.records else []
    _write_csv(summary, SUMMARY_COLUMNS, (row.values() for row in rows))
    written = [per_round, summary]
    if svg and log.records:
        path = directory / "diff.svg"
        series = {m: log.diff_series(m).mean(axis=0) for m in log.methods if m != "base_ol"}
        path.write_text(diff_svg(series), encoding="utf-8", newline="\n")
        written.append(path)
    return written


def read_per_round(path: Union[str, Path], T: Optional[int] = None) -> MetricsLog:
    """Rebuild a :class:`MetricsLog` from ``per_round.csv``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PER_ROUND_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        records = [
            Record(
                row["method"], int(row["seed"]), int(row["t"]), float(row["accuracy"]),
                int(row["window_rounds"]), int(row["active_size"]), row["model_id"],
            )
            for row in reader
        ]
    if T is None:
        T = max((r.t for r in records), default=0)
    return MetricsLog(T, records)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#17becf")


def diff_svg(series: dict[str, np.ndarray], width: int = 640, height: int = 320) -> str:
    """Line chart of accuracy-difference series (pp) against round index."""
    pad = 40
    values = np.concatenate([np.asarray(v, dtype=float) for v in series.values()]) if series else np.zeros(1)
    lo, hi = min(float(values.min()), 0.0), max(float(values.max()), 0.0)
    if hi == lo:
        hi = lo + 1.0
    T = max((len(v) for v in series.values()), default=1)

    def xy(t: int, v: float) -> str:
        x = pad + (width - 2 * pad) * (t / max(T - 1, 1))
        y = height - pad - (height - 2 * pad) * ((v - lo) / (hi - lo))
        return f"{x:.2f},{y:.2f}"

    zero_y = xy(0, 0.0).split(",")[1]
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{zero_y}" x2="{width - pad}" y2="{zero_y}" stroke="#999" stroke-dasharray="4 3"/>',
        f'<text x="{pad}" y="{pad - 8}" font-size="11">{hi:.3g} pp</text>',
        f'<text x="{pad}" y="{height - pad + 14}" font-size="11">{lo:.3g} pp</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" font-size="11" text-anchor="end">t = {T}</text>',
    ]
    for i, (name, v) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(xy(t, float(a)) for t, a in enumerate(v))
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        lines.append(f'<text x="{width - pad + 4}" y="{pad + 14 * i}" font-size="11" fill="{color}">{name}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def output_dir(cli_value: Optional[str], config: Optional[ExperimentConfig]) -> Path:
    """``--out``, then the config's ``output_dir``, then ``$SHIFTADAPT_OUTPUT_DIR``, then ``results``."""
    if cli_value:
        return Path(cli_value)
    if config is not None and config.output_dir:
        return Path(config.output_dir)
    return Path(os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def format_summary(rows: Sequence[SummaryRow]) -> str:
    head = f"{'method':<20} {'acc':>7} {'diff_pp':>8} {'stderr':>7} {'W/D/L':>12} {'regret':>8}"
    out = [head]
    for r in rows:
        wdl = f"{r.wins}/{r.draws}/{r.losses}"
        flag = "*" if r.single_seed else ""
        out.append(
            f"{r.method:<20} {r.mean_accuracy:7.4f} {r.mean_diff_pp:+8.3f} {r.stderr_pp:7.3f}{flag} {wdl:>12} {r.mean_regret:8.3f}"
        )
    if any(r.single_seed for r in rows):
        out.append("* single seed: standard error not defined, reported as 0")
    return "\n".join(out)
