"""Experiment runner: games x algorithms -> traces, constants, summary.csv and plots.

Config schema (JSON)::

    {
      "output_dir": "out",                 # relative to the working directory
      "total_steps": 1000,
      "diagnostics": true,
      "constants_samples": 10000,          # Monte-Carlo samples for C_P
      "record_wall_clock": false,          # true breaks byte-identical reruns
      "plots": ["gap"],                    # any of "gap", "kl"
      "workers": null,                     # default: NASH_ARENA_THREADS or all cores
      "games": [{"builtin": "rps", "init_policy": [0.97, 0.015, 0.015]},
                {"file": "game.json"},
                {"n": 10, "m": 2, "seed": 0}],
      "algorithms": ["OMWU", {"name": "OMD", "eta": 0.4, "total_steps": 10000},
                     {"name": "OMWU", "policy": "mlp", "lr": 100, "checkpoint_every": 500}],
      "groups": [ ... ]                    # optional: sub-configs sharing the defaults above
    }

Sweep configs add ``"sweep": {"n": [...], "m": [...], "seed": [...],
"eta": [...] | "V_eta", "inner_lr": [...] | "V_inner"}``.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .equilibrium import duality_gap, instance_constants, interior_ne, kl_project
from .exceptions import AssumptionViolatedError
from .game import GameInstance, rps_matrix, sample_preference_matrix
from .neural import MlpPolicy, NeuralConfig, NeuralState, neural_solver_step
from .potentials import fit_linear_rate
from .solvers import ALGORITHMS, SolverConfig, TraceRecord, run_solver

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("game_id", "algorithm", "eta", "beta", "steps", "gap_last", "gap_avg",
                   "kl_last", "epsilon", "L", "lambda_min", "c_p_estimate", "burn_in_step",
                   "linear_rate", "fit_r2", "wall_s")
PLOT_FLOOR = 1e-6
PLOT_STYLES = ("gap", "kl")


def v_eta_grid() -> list:
    """``{i * 10^j : 1 <= i <= 10, -4 <= j <= 1}`` as exact decimals."""
    return sorted({float(f"{i}e{j}") for i in range(1, 11) for j in range(-4, 2)})


V_INNER = [3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 0.01, 0.03, 0.1]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GameSpec:
    game_id: str
    builtin: str | None = None
    file: str | None = None
    n: int | None = None
    m: int | None = None
    seed: int | None = None
    init_policy: tuple | None = None

    def build(self) -> GameInstance:
        if self.builtin is not None:
            return GameInstance(rps_matrix())
        if self.file is not None:
            return GameInstance.load(self.file)
        return sample_preference_matrix(self.n, self.m, self.seed)


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    label: str
    policy: str = "tabular"
    overrides: tuple = ()
    total_steps: int | None = None
    checkpoint_every: int = 0

    def solver_config(self, steps: int) -> SolverConfig:
        return SolverConfig.default(self.name, total_steps=steps, **dict(self.overrides))

    def neural_config(self, steps: int) -> NeuralConfig:
        return NeuralConfig.default(self.name, total_steps=steps, **dict(self.overrides))


@dataclass(frozen=True)
class Group:
    games: tuple
    algorithms: tuple
    total_steps: int
    diagnostics: bool


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: str
    groups: tuple
    constants_samples: int = 10_000
    constants_seed: int = 0
    record_wall_clock: bool = False
    plots: tuple = ()
    workers: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = expand_sweep(d)
        groups = d.get("groups") or [d]
        parsed = []
        for g in groups:
            merged = {**{k: v for k, v in d.items() if k != "groups"}, **g}
            parsed.append(_parse_group(merged))
        plots = d.get("plots", [])
        plots = [plots] if isinstance(plots, str) else list(plots)
        for p in plots:
            if p not in PLOT_STYLES:
                raise ConfigError(f"unknown plot style {p!r}")
        if "output_dir" not in d:
            raise ConfigError("config needs an output_dir")
        return cls(output_dir=str(d["output_dir"]), groups=tuple(parsed),
                   constants_samples=int(d.get("constants_samples", 10_000)),
                   constants_seed=int(d.get("constants_seed", 0)),
                   record_wall_clock=bool(d.get("record_wall_clock", False)),
                   plots=tuple(plots), workers=d.get("workers"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _parse_game(g) -> GameSpec:
    if isinstance(g, str):
        g = {"builtin": g} if g == "rps" else {"file": g}
    init = tuple(float(x) for x in g["init_policy"]) if g.get("init_policy") is not None else None
    if "builtin" in g:
        if g["builtin"] != "rps":
            raise ConfigError(f"unknown builtin game {g['builtin']!r}")
        return GameSpec(g.get("id", "rps"), builtin="rps", init_policy=init)
    if "file" in g:
        path = Path(g["file"])
        if not path.is_file():
            raise ConfigError(f"game file {path} does not exist")
        return GameSpec(g.get("id", path.stem), file=str(path), init_policy=init)
    try:
        n, m, seed = int(g["n"]), int(g["m"]), int(g["seed"])
    except KeyError as exc:
        raise ConfigError(f"game entry needs builtin, file or n/m/seed: {g}") from exc
    return GameSpec(g.get("id", f"n{n}_m{m}_s{seed}"), n=n, m=m, seed=seed, init_policy=init)


def _parse_algorithm(a) -> AlgorithmSpec:
    if isinstance(a, str):
        a = {"name": a}
    a = dict(a)
    name = str(a.pop("name")).upper()
    if name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")
    policy = a.pop("policy", "tabular")
    if policy not in ("tabular", "mlp"):
        raise ConfigError(f"policy must be 'tabular' or 'mlp', got {policy!r}")
    label = a.pop("label", None)
    steps = a.pop("total_steps", None)
    ckpt = int(a.pop("checkpoint_every", 0))
    if label is None:
        label = name if policy == "tabular" else f"{name}-mlp"
        for k in sorted(a):
            if isinstance(a[k], bool):
                continue
            label += f"__{k}={a[k]:g}" if isinstance(a[k], (int, float)) else f"__{k}={a[k]}"
    return AlgorithmSpec(name, label, policy, tuple(sorted(a.items())),
                         None if steps is None else int(steps), ckpt)


def _parse_group(d: dict) -> Group:
    algos = d.get("algorithms", [])
    if not algos:
        raise ConfigError("config lists no algorithms")
    games = d.get("games", [])
    if not games:
        raise ConfigError("config lists no games")
    steps = int(d.get("total_steps", 1000))
    if steps <= 0:
        raise ConfigError("total_steps must be positive")
    algo_specs = tuple(_parse_algorithm(a) for a in algos)
    for a in algo_specs:
        if a.total_steps is not None and a.total_steps <= 0:
            raise ConfigError("total_steps must be positive")
        # surface bad hyperparameter names before anything runs
        try:
            (a.solver_config(1) if a.policy == "tabular" else a.neural_config(1))
        except TypeError as exc:
            raise ConfigError(f"bad overrides for {a.label}: {exc}") from exc
    return Group(tuple(_parse_game(g) for g in games), algo_specs, steps,
                 bool(d.get("diagnostics", True)))


def _grid(v, named):
    if isinstance(v, str):
        if v not in named:
            raise ConfigError(f"unknown grid {v!r}")
        return named[v]
    return list(v) if isinstance(v, (list, tuple)) else [v]


def expand_sweep(d: dict) -> dict:
    """Turn a ``sweep`` block into explicit game and algorithm lists."""
    if "sweep" not in d:
        return d
    sw = dict(d["sweep"])
    out = {k: v for k, v in d.items() if k != "sweep"}
    grids = {"V_eta": v_eta_grid(), "V_inner": V_INNER}
    if any(k in sw for k in ("n", "m", "seed")):
        ns, ms, seeds = (_grid(sw.get(k, default), grids) for k, default in
                         (("n", 10), ("m", 1), ("seed", 0)))
        out["games"] = list(d.get("games", [])) + [
            {"n": int(n), "m": int(m), "seed": int(s)}
            for n, m, s in itertools.product(ns, ms, seeds)]
    hp = [k for k in ("eta", "inner_lr", "beta", "lr") if k in sw]
    if hp:
        values = [_grid(sw[k], grids) for k in hp]
        algos = []
        for a in d.get("algorithms", []):
            a = {"name": a} if isinstance(a, str) else dict(a)
            for combo in itertools.product(*values):
                algos.append({**a, **{k: float(v) for k, v in zip(hp, combo)}})
        out["algorithms"] = algos
    return out


# ---------------------------------------------------------------- execution


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ""
    return str(v)


def write_summary(rows, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in SUMMARY_COLUMNS])
    Path(path).write_text(buf.getvalue())


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _game_task(spec: GameSpec, outdir: str, samples: int, seed: int) -> dict:
    game = spec.build()
    gdir = Path(outdir) / spec.game_id
    gdir.mkdir(parents=True, exist_ok=True)
    game.save(gdir / "game.json")
    const = {"epsilon": None, "L": float(np.max(np.abs(game.matrix))), "lambda_min": None,
             "c_p_estimate": None, "samples_used": 0}
    try:
        ns = interior_ne(game.matrix)
        start = np.full(game.n, 1.0 / game.n) if spec.init_policy is None else np.asarray(spec.init_policy)
        pi_star = kl_project(game.matrix, ns, start)
        const = instance_constants(game.matrix, pi_star, n_samples=samples, seed=seed, ns=ns).to_dict()
    except AssumptionViolatedError as exc:
        const["error"] = str(exc)
    (gdir / "constants.json").write_text(json.dumps(const) + "\n")
    return const


def _run_neural_cell(game, algo: AlgorithmSpec, steps: int, cdir: Path, timing: bool):
    import time

    cfg = algo.neural_config(steps)
    state = NeuralState.initial(MlpPolicy.initialize(game.n, cfg.seed))
    P = game.matrix
    records, avg = [], np.zeros(game.n)
    if algo.checkpoint_every:
        (cdir / "checkpoints").mkdir(exist_ok=True)
    for k in range(steps):
        t0 = time.perf_counter_ns() if timing else 0
        state = neural_solver_step(state, cfg, P)
        pi = state.main.policy()
        avg += pi
        wall = time.perf_counter_ns() - t0 if timing else 0
        records.append(TraceRecord(k + 1, duality_gap(P, pi), duality_gap(P, avg / (k + 1)), wall_ns=wall))
        if algo.checkpoint_every and (k + 1) % algo.checkpoint_every == 0:
            (cdir / "checkpoints" / f"step_{k + 1:08d}.json").write_text(
                json.dumps(state.main.to_dict()) + "\n")
    return records, cfg.lr, cfg.beta


def _cell_task(spec: GameSpec, algo: AlgorithmSpec, group_steps: int, diagnostics: bool,
               outdir: str, const: dict, timing: bool) -> dict:
    steps = algo.total_steps or group_steps
    row = {"game_id": spec.game_id, "algorithm": algo.label, "steps": steps,
           "epsilon": const.get("epsilon"), "L": const.get("L"),
           "lambda_min": const.get("lambda_min"), "c_p_estimate": const.get("c_p_estimate")}
    cdir = Path(outdir) / spec.game_id / algo.label
    try:
        cdir.mkdir(parents=True, exist_ok=True)
        game = spec.build()
        if algo.policy == "mlp":
            records, eta, beta = _run_neural_cell(game, algo, steps, cdir, timing)
            trace = None
        else:
            cfg = algo.solver_config(steps)
            eta, beta = cfg.eta, cfg.beta
            trace = run_solver(game, cfg, diagnostics=diagnostics,
                               init_policy=spec.init_policy, timing=timing)
            records = trace.records
        text = "".join(json.dumps(r.to_dict()) + "\n" for r in records)
        (cdir / "trace.jsonl").write_text(text)
        last = records[-1]
        row.update(eta=float(eta), beta=float(beta), gap_last=last.gap_last, gap_avg=last.gap_avg,
                   kl_last=last.kl_to_star, wall_s=sum(r.wall_ns for r in records) / 1e9)
        if trace is not None and trace.pi_star is not None:
            try:
                rep = fit_linear_rate(trace, eps=const.get("epsilon"))
                row.update(burn_in_step=rep.burn_in_step, linear_rate=rep.linear_rate,
                           fit_r2=rep.fit_r2)
            except ValueError as exc:
                logger.info("%s/%s: no rate fit (%s)", spec.game_id, algo.label, exc)
        row["ok"] = True
    except Exception as exc:  # crash isolation: record and continue
        row["ok"] = False
        row["error"] = f"{type(exc).__name__}: {exc}"
        (cdir / "error.txt").write_text(traceback.format_exc())
        logger.error("cell %s/%s aborted: %s", spec.game_id, algo.label, exc)
    return row


def _workers(requested) -> int:
    env = os.environ.get("NASH_ARENA_THREADS")
    if env:
        return max(1, int(env))
    if requested:
        return max(1, int(requested))
    return os.cpu_count() or 1


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *j) for j in jobs]
        return [f.result() for f in futures]


@dataclass
class ExperimentResult:
    rows: list
    failures: list = field(default_factory=list)
    output_dir: str = ""

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every (game, algorithm) cell; rows come back in config order."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = _workers(cfg.workers)
    specs = {}
    for g in cfg.groups:
        for s in g.games:
            if s.game_id in specs and specs[s.game_id] != s:
                raise ConfigError(f"game id {s.game_id!r} used for two different games")
            specs[s.game_id] = s
    ids = list(specs)
    consts = dict(zip(ids, _map(_game_task, [(specs[i], str(out), cfg.constants_samples,
                                             cfg.constants_seed) for i in ids], workers)))
    jobs = [(s, a, g.total_steps, g.diagnostics, str(out), consts[s.game_id], cfg.record_wall_clock)
            for g in cfg.groups for s in g.games for a in g.algorithms]
    rows = _map(_cell_task, jobs, workers)
    failures = [r for r in rows if not r.get("ok")]
    write_summary(rows, out / "summary.csv")
    for style in cfg.plots:
        for gid in ids:
            traces = _collect_traces(out / gid)
            if style == "kl":
                traces = [(k, v) for k, v in traces if v and v[0].get("kl_to_star") is not None]
            if traces:
                render_plot(traces, style, out / gid / f"{style}.svg")
    return ExperimentResult(rows, failures, str(out))


# ---------------------------------------------------------------- plotting


def _collect_traces(root: Path) -> list:
    out = []
    for p in sorted(Path(root).rglob("trace.jsonl")):
        label = str(p.parent.relative_to(root)) if p.parent != Path(root) else p.parent.name
        recs = [json.loads(line) for line in p.read_text().splitlines() if line.strip()]
        out.append((label, recs))
    return out


def plot_series(traces, style: str = "gap"):
    """``[(label, steps, clipped values)]`` for each trace; traces are ``(label, records)`` pairs."""
    if not traces:
        raise ValueError("nothing to plot")
    if style not in PLOT_STYLES:
        raise ValueError(f"style must be one of {PLOT_STYLES}")
    key = "gap_last" if style == "gap" else "kl_to_star"
    series = []
    for i, item in enumerate(traces):
        label, recs = item if isinstance(item, tuple) else (f"trace {i}", item)
        recs = [r if isinstance(r, dict) else r.to_dict() for r in getattr(recs, "records", recs)]
        steps = np.array([r["step"] for r in recs], dtype=float)
        vals = np.array([np.nan if r[key] is None else r[key] for r in recs], dtype=float)
        series.append((label, steps, np.maximum(vals, PLOT_FLOOR)))
    return series


def render_plot(traces, style, path):
    """Write a log-scale SVG line chart, one ``<g id="series-i">`` per trace."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = plot_series(traces, style)
    with matplotlib.rc_context({"svg.hashsalt": "nash-arena", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, (label, x, y) in enumerate(series):
            (line,) = ax.plot(x, y, label=label, linewidth=1.2)
            line.set_gid(f"series-{i}")
        ax.set_yscale("log")
        ax.set_ylim(bottom=PLOT_FLOOR * 0.5)
        ax.axhline(PLOT_FLOOR, color="0.6", linewidth=0.6, linestyle=":")
        ax.set_xlabel("step")
        ax.set_ylabel("duality gap" if style == "gap" else "KL to target")
        leg = ax.legend(fontsize=7)
        for i, text in enumerate(leg.get_texts()):
            text.set_gid(f"legend-{i}")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(path)
