"""Experiment runner: configs, seeded sweeps, aggregation, heatmaps and comparisons.

Output layout for an experiment rooted at ``output_dir``::

    manifest.json
    runs/<group>/seed<k>/record.csv     (+ visits.csv, heatmap.csv for agent runs)
    aggregate/<group>.csv
    figures/*.png

A *group* is one weight pair; a *run set* is a ``runs/<group>`` directory.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import agents as ag
from .exact_pg import ExactPGConfig, RegularizationWeights, train_exact
from .gridworlds import GridEnv, make_env, with_horizon
from .records import TrainRecord

logger = logging.getLogger(__name__)

KINDS = ("exact_frozenlake", "coverage_grid", "fourrooms_ac", "sweep")
METRICS = ("auc", "final", "coverage")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class RunSpec:
    group: str
    seed: int
    weights: RegularizationWeights

    @property
    def key(self) -> str:
        return f"{self.group}/seed{self.seed}"


def group_name(w: RegularizationWeights) -> str:
    return f"ls{w.lambda_s!r}_lp{w.lambda_pi!r}"


@dataclass
class ExperimentConfig:
    kind: str
    env: dict
    output_dir: str
    seeds: list = field(default_factory=lambda: [0])
    weights: list = field(default_factory=lambda: [{"lambda_s": 0.0, "lambda_pi": 0.1}])
    runner: str = ""  # "exact" or "agent"; implied by kind except for sweeps
    discount: float = 0.99
    exact: dict = field(default_factory=dict)
    agent: dict = field(default_factory=dict)
    workers: int = 1
    figures: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        implied = {"exact_frozenlake": "exact", "coverage_grid": "agent", "fourrooms_ac": "agent"}
        if self.kind in implied:
            if self.runner and self.runner != implied[self.kind]:
                raise ConfigError(f"kind {self.kind} implies runner {implied[self.kind]!r}")
            self.runner = implied[self.kind]
        elif self.runner not in ("exact", "agent"):
            raise ConfigError("sweep configs need runner 'exact' or 'agent'")
        if not isinstance(self.env, dict) or "name" not in self.env:
            raise ConfigError("env must be an object with a 'name'")
        if self.kind == "exact_frozenlake" and self.env["name"] != "frozen_lake":
            raise ConfigError("exact_frozenlake needs env name 'frozen_lake'")
        if self.kind == "fourrooms_ac":
            if self.env["name"] != "four_rooms":
                raise ConfigError("fourrooms_ac needs env name 'four_rooms'")
            self.agent = {"algorithm": "a2c_gae", **self.agent}
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list without repeats")
        self.seeds = [int(s) for s in self.seeds]
        self.weights = _expand_weights(self.weights)
        keys = [group_name(w) for w in self.weight_objects()]
        if len(set(keys)) != len(keys):
            raise ConfigError("weight grid contains duplicate pairs")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        # validate nested configs eagerly
        if self.runner == "exact":
            self.exact_config(RegularizationWeights(), 0)
        else:
            self.agent_config(RegularizationWeights(), 0)
        self.env_spec()

    # -- builders ----------------------------------------------------

    def weight_objects(self) -> list[RegularizationWeights]:
        try:
            return [RegularizationWeights(**w) for w in self.weights]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad weights: {exc}") from exc

    def runs(self) -> list[RunSpec]:
        return [RunSpec(group_name(w), s, w) for w in self.weight_objects() for s in self.seeds]

    def env_spec(self):
        params = {k: v for k, v in self.env.items() if k not in ("name", "max_episode_steps")}
        try:
            spec = make_env(self.env["name"], **params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad env: {exc}") from exc
        if "max_episode_steps" in self.env:
            spec = with_horizon(spec, int(self.env["max_episode_steps"]))
        return spec

    def exact_config(self, weights, seed) -> ExactPGConfig:
        try:
            return ExactPGConfig(weights=weights, seed=seed, **self.exact)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad exact config: {exc}") from exc

    def agent_config(self, weights, seed) -> ag.AgentConfig:
        try:
            return ag.AgentConfig(weights=weights, seed=seed, **self.agent)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad agent config: {exc}") from exc

    def materialized(self) -> dict:
        """Config with every default filled in, as stored in the manifest."""
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        w0 = RegularizationWeights()
        if self.runner == "exact":
            c = asdict(self.exact_config(w0, 0))
        else:
            c = asdict(self.agent_config(w0, 0))
            c["hidden"] = list(c["hidden"])
        for k in ("weights", "seed"):
            c.pop(k)
        out["exact" if self.runner == "exact" else "agent"] = c
        env = dict(self.env)
        env.setdefault("max_episode_steps", self.env_spec().max_episode_steps)
        out["env"] = env
        return out

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.materialized()).encode()).hexdigest()


def _expand_weights(spec) -> list[dict]:
    """Accept a list of pairs or a grid ``{"lambda_s": [...], "lambda_pi": [...]}``."""
    if isinstance(spec, dict):
        ls = spec.get("lambda_s", [0.0])
        lp = spec.get("lambda_pi", [0.1])
        extra = {k: v for k, v in spec.items() if k not in ("lambda_s", "lambda_pi")}
        ls = ls if isinstance(ls, list) else [ls]
        lp = lp if isinstance(lp, list) else [lp]
        return [{"lambda_s": float(a), "lambda_pi": float(b), **extra} for a in ls for b in lp]
    if not isinstance(spec, list) or not spec:
        raise ConfigError("weights must be a non-empty list or a grid object")
    out = []
    for w in spec:
        if not isinstance(w, dict):
            raise ConfigError("each weight entry must be an object")
        w = {"lambda_pi": 0.1, "lambda_s": 0.0, **w}
        out.append(w)
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _line_of(text: str, key: str) -> int | None:
    m = re.search(rf'"{re.escape(key)}"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse_config(text: str, base_dir: str | Path | None = None) -> ExperimentConfig:
    """Parse a JSON experiment config; errors carry the offending line number."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno) from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", 1)
    known = {f.name for f in fields(ExperimentConfig)}
    for k in raw:
        if k not in known:
            raise ConfigError(f"unknown key {k!r}", _line_of(text, k))
    for k in ("kind", "env", "output_dir"):
        if k not in raw:
            raise ConfigError(f"missing required key {k!r}", 1)
    if base_dir is not None and not Path(raw["output_dir"]).is_absolute():
        raw["output_dir"] = str(Path(base_dir) / raw["output_dir"])
    try:
        return ExperimentConfig(**raw)
    except ConfigError as exc:
        # point at the first JSON key named in the message, nested keys first
        words = re.findall(r"\w+", str(exc))
        lines = [_line_of(text, w) for w in words if w not in raw] + \
                [_line_of(text, w) for w in words if w in raw]
        line = next((n for n in lines if n), None)
        raise ConfigError(str(exc), line) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


# -- running -------------------------------------------------------------

def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_one(config: ExperimentConfig, run: RunSpec) -> dict:
    """Execute one (weights, seed) run and write its artifacts."""
    out = Path(config.output_dir) / "runs" / run.group / f"seed{run.seed}"
    out.mkdir(parents=True, exist_ok=True)
    meta = {"key": run.key, "seed": run.seed, "weights": asdict(run.weights), "status": "ok"}
    spec = config.env_spec()
    try:
        if config.runner == "exact":
            mdp = spec.to_mdp(config.discount)
            record = train_exact(mdp, config.exact_config(run.weights, run.seed))
            record.to_csv(out / "record.csv")
        else:
            env = GridEnv(spec)
            result = ag.train(env, config.agent_config(run.weights, run.seed))
            result.record.to_csv(out / "record.csv")
            result.counts.to_csv(out / "visits.csv")
            write_grid_csv(out / "heatmap.csv", heatmap(result.counts.grid()))
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest
        logger.exception("run %s failed", run.key)
        partial = getattr(exc, "record", None)
        if partial is not None:
            partial.to_csv(out / "record.csv")
        meta["status"] = "failed"
        meta["error"] = f"{type(exc).__name__}: {exc}"
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    meta["dir"] = str(out.relative_to(config.output_dir))
    return meta


def _run_one_packed(args):
    return run_one(*args)


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every (weights, seed) pair, aggregate, plot, and write the manifest."""
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    runs = config.runs()
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            metas = list(pool.map(_run_one_packed, [(config, r) for r in runs]))
    else:
        metas = [run_one(config, r) for r in runs]
    aggregate(root)
    if config.figures:
        from . import plotting
        plotting.render_experiment(root)
    return write_manifest(config, metas)


def write_manifest(config: ExperimentConfig, metas: list[dict]) -> dict:
    root = Path(config.output_dir)
    artifacts = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            artifacts[p.relative_to(root).as_posix()] = sha256_file(p)
    manifest = {
        "config": config.materialized(),
        "config_hash": config.config_hash(),
        "seeds": config.seeds,
        "versions": {"package": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "runs": metas,
        "status": "failed" if any(m["status"] != "ok" for m in metas) else "ok",
        "artifacts": artifacts,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# -- aggregation -------------------------------------------------------------

def run_dirs(run_set: str | Path) -> list[Path]:
    """Seed directories (with a record) inside a run-set directory, ordered by seed."""
    dirs = [p for p in Path(run_set).iterdir() if p.is_dir() and (p / "record.csv").exists()]
    return sorted(dirs, key=lambda p: _seed_of(p))


def _seed_of(run_dir: Path) -> int:
    meta = run_dir / "meta.json"
    if meta.exists():
        return int(json.loads(meta.read_text())["seed"])
    m = re.fullmatch(r"seed(-?\d+)", run_dir.name)
    if not m:
        raise ValueError(f"cannot determine seed of {run_dir}")
    return int(m.group(1))


@dataclass
class AggregateCurve:
    x: np.ndarray
    mean: dict
    stderr: dict
    run_keys: list

    def to_record(self) -> TrainRecord:
        names = list(self.mean)
        cols = ["x"] + [f"{n}_{s}" for n in names for s in ("mean", "stderr")]
        rows = []
        for i, x in enumerate(self.x):
            row = [int(x)]
            for n in names:
                row += [float(self.mean[n][i]), float(self.stderr[n][i])]
            rows.append(row)
        return TrainRecord(cols, rows)


def aggregate_records(records: list[TrainRecord], run_keys=None) -> AggregateCurve:
    """Pointwise mean and stderr = sample std / sqrt(N) (0 when N = 1)."""
    if not records:
        raise ValueError("nothing to aggregate")
    cols = records[0].columns
    n = min(len(r) for r in records)
    x = records[0].column(cols[0])[:n]
    means, ses = {}, {}
    for c in cols[1:]:
        stack = np.stack([r.column(c)[:n] for r in records])
        means[c] = stack.mean(axis=0)
        if len(records) > 1:
            ses[c] = stack.std(axis=0, ddof=1) / np.sqrt(len(records))
        else:
            ses[c] = np.zeros(n)
    return AggregateCurve(x, means, ses, list(run_keys or []))


def aggregate(root: str | Path) -> list[Path]:
    """Re-aggregate every run set under ``root/runs`` into ``root/aggregate``."""
    root = Path(root)
    runs_root = root / "runs"
    if not runs_root.is_dir():
        raise FileNotFoundError(f"no runs directory under {root}")
    out_dir = root / "aggregate"
    out_dir.mkdir(exist_ok=True)
    written = []
    for group in sorted(p for p in runs_root.iterdir() if p.is_dir()):
        dirs = [d for d in run_dirs(group) if _run_ok(d)]
        if not dirs:
            continue
        curve = aggregate_records([TrainRecord.from_csv(d / "record.csv") for d in dirs],
                                  [f"{group.name}/{d.name}" for d in dirs])
        path = out_dir / f"{group.name}.csv"
        curve.to_record().to_csv(path)
        written.append(path)
    return written


def _run_ok(run_dir: Path) -> bool:
    meta = run_dir / "meta.json"
    return not meta.exists() or json.loads(meta.read_text()).get("status") == "ok"


# -- heatmaps ------------------------------------------------------------------

def heatmap(grid) -> np.ndarray:
    """Max-normalize non-wall cells to [0, 1]; wall cells (negative) become -1."""
    g = np.asarray(grid, dtype=float)
    walls = g < 0
    floor = np.where(walls, 0.0, g)
    top = floor.max() if floor.size else 0.0
    out = floor / top if top > 0 else floor
    out[walls] = -1.0
    return out


def write_grid_csv(path, grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(grid):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v) for v in row])


def read_grid_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def heatmap_run(run_dir: str | Path, render: bool = True) -> Path:
    run_dir = Path(run_dir)
    counts = read_grid_csv(run_dir / "visits.csv")
    out = run_dir / "heatmap.csv"
    hm = heatmap(counts)
    write_grid_csv(out, hm)
    if render:
        from . import plotting
        plotting.plot_heatmap(hm, run_dir / "heatmap.png", title=run_dir.parent.name)
    return out


# -- comparisons -----------------------------------------------------------------

def run_metric(record: TrainRecord, metric: str) -> float:
    """Scalar summary of one run.

    ``auc`` is the mean of the primary return column over all rows,
    ``final`` its mean over the last quarter of rows, ``coverage`` the last
    logged coverage.
    """
    primary = "J" if "J" in record.columns else "env_return_mean"
    if metric == "auc":
        return float(record.column(primary).mean())
    if metric == "final":
        v = record.column(primary)
        return float(v[-max(1, len(v) // 4):].mean())
    if metric == "coverage":
        if "coverage" not in record.columns:
            raise ValueError("record has no coverage column")
        return record.last("coverage")
    raise ValueError(f"metric must be one of {METRICS}")


@dataclass
class ComparisonReport:
    metric: str
    seeds: list
    values_a: list
    values_b: list

    @property
    def wins(self) -> int:
        return sum(a > b for a, b in zip(self.values_a, self.values_b))

    @property
    def losses(self) -> int:
        return sum(a < b for a, b in zip(self.values_a, self.values_b))

    @property
    def ties(self) -> int:
        return len(self.seeds) - self.wins - self.losses

    @property
    def median_a(self) -> float:
        return float(np.median(self.values_a))

    @property
    def median_b(self) -> float:
        return float(np.median(self.values_b))

    @property
    def median_gap(self) -> float:
        return self.median_a - self.median_b

    @property
    def mean_gap(self) -> float:
        return float(np.mean(self.values_a) - np.mean(self.values_b))

    def to_text(self) -> str:
        lines = [f"metric: {self.metric}", "seed,A,B"]
        lines += [f"{s},{a!r},{b!r}" for s, a, b in zip(self.seeds, self.values_a, self.values_b)]
        lines.append(f"wins(A>B): {self.wins}  losses: {self.losses}  ties: {self.ties}")
        lines.append(f"median A: {self.median_a!r}  median B: {self.median_b!r}")
        lines.append(f"median gap: {self.median_gap!r}  mean gap: {self.mean_gap!r}")
        return "\n".join(lines) + "\n"


def compare_values(values_a: dict, values_b: dict, metric: str = "final") -> ComparisonReport:
    """Pair per-seed values; seed sets must match."""
    if sorted(values_a) != sorted(values_b):
        raise ValueError(f"seed mismatch: {sorted(values_a)} vs {sorted(values_b)}")
    seeds = sorted(values_a)
    return ComparisonReport(metric, seeds, [values_a[s] for s in seeds], [values_b[s] for s in seeds])


def compare(run_set_a: str | Path, run_set_b: str | Path, metric: str = "final") -> ComparisonReport:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")

    def values(rs):
        return {_seed_of(d): run_metric(TrainRecord.from_csv(d / "record.csv"), metric) for d in run_dirs(rs)}

    return compare_values(values(run_set_a), values(run_set_b), metric)
