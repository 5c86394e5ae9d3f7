"""Experiment orchestration: config parsing, multi-seed sweeps, tables.

A run walks the grid (method, epsilon, seed), trains each cell with its own
deterministically derived random source, and aggregates test accuracies
into a machine CSV plus an aligned human table. Cell seeds are hashes of
(base seed, method name, epsilon, seed index), so removing one method from
a config never changes any other method's numbers. Failed cells are
recorded with their reason and never abort siblings.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .data import (
    Dataset,
    apply_minmax,
    fit_minmax,
    load_csv,
    load_libsvm,
    project_unit_ball,
    stratified_split,
    synth_blobs,
)
from .model import LinearModel, LossParams
from .numerics import RandomSource
from .privacy import PrivacyBudget, _subsampled_gaussian_rdp, _rdp_to_eps
from .trainers import (
    GpConfig,
    SolverError,
    TrainReport,
    WpConfig,
    _cs_dual_solve,
    _solve_binary_hinge,
    linear_ce_gp,
    ovr_gp,
    ovr_wp,
    pmsvm_agp,
    pmsvm_gp,
    pmsvm_wp,
    solve_allinone,
)

METHOD_NAMES = (
    "pmsvm_wp",
    "pmsvm_gp",
    "pmsvm_agp",
    "ovr_wp",
    "ovr_gp",
    "linear_ce_gp",
)

WP_KEYS = {"C_over_n", "tol", "max_iter", "encoding"}
GP_KEYS = {
    "C", "lam", "mu", "varsigma", "R", "T", "q", "batch_size", "schedule",
    "base_lr", "optimizer", "beta1", "beta2", "adam_gamma", "with_bias",
    "trace_every",
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the location."""


@dataclass
class MethodSpec:
    name: str
    seeds: int
    params: dict


@dataclass
class ExperimentConfig:
    dataset: dict
    minmax: bool
    unit_ball: bool
    test_fraction: float
    epsilons: list[float]
    delta: float
    base_seed: int
    methods: list[MethodSpec]
    outdir: str


@dataclass
class ResultRow:
    dataset: str
    method: str
    epsilon: float
    accuracies: list[float] = field(default_factory=list)
    wall_clocks: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float | None:
        return float(np.mean(self.accuracies)) if self.accuracies else None

    @property
    def std(self) -> float | None:
        # Reported only from two seeds up; a single value has no spread.
        if len(self.accuracies) >= 2:
            return float(np.std(self.accuracies))
        return None

    @property
    def status(self) -> str:
        if not self.failures:
            return "ok"
        return f"failed {len(self.failures)} cell(s): {self.failures[0]}"


@dataclass
class ResultsTable:
    rows: list[ResultRow]


def cell_seed(base_seed: int, method: str, epsilon: float, seed_index: int) -> int:
    """Stable 64-bit seed for one (method, epsilon, seed) cell."""
    h = hashlib.blake2b(digest_size=8)
    h.update(f"{int(base_seed)}|{method}|{float(epsilon)!r}|{int(seed_index)}".encode())
    return int.from_bytes(h.digest(), "little")


def _need(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing key {key!r} in [{where}]")
    return section[key]


def parse_config(path: str) -> ExperimentConfig:
    """Read and validate a TOML experiment description."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None

    ds = _need(raw, "dataset", "dataset")
    kind = _need(ds, "kind", "dataset")
    if kind == "synthetic":
        for key in ("classes", "n_per_class", "dim", "separation"):
            _need(ds, key, "dataset")
    elif kind == "csv":
        _need(ds, "path", "dataset")
        ds.setdefault("label_column", 0)
        ds.setdefault("has_header", False)
    elif kind == "libsvm":
        _need(ds, "path", "dataset")
    else:
        raise ConfigError(
            f"[dataset] kind must be synthetic, csv, or libsvm, got {kind!r}"
        )

    pre = raw.get("preprocess", {})
    budget = _need(raw, "budget", "budget")
    epsilons = [float(e) for e in _need(budget, "epsilons", "budget")]
    if not epsilons or any(e <= 0 for e in epsilons):
        raise ConfigError("[budget] epsilons must be a nonempty list of positives")
    delta = float(_need(budget, "delta", "budget"))
    if not 0 < delta < 1:
        raise ConfigError("[budget] delta must lie in (0,1)")

    seeds = raw.get("seeds", {})
    base_seed = int(seeds.get("base", 0))
    default_count = int(seeds.get("count", 1))
    if default_count < 1:
        raise ConfigError("[seeds] count must be >= 1")

    methods_raw = raw.get("method", [])
    if not methods_raw:
        raise ConfigError("need at least one [[method]] block")
    methods: list[MethodSpec] = []
    seen = set()
    for i, m in enumerate(methods_raw):
        name = _need(m, "name", f"method #{i + 1}")
        if name not in METHOD_NAMES:
            raise ConfigError(
                f"[[method]] #{i + 1}: unknown method {name!r}; "
                f"choose from {', '.join(METHOD_NAMES)}"
            )
        if name in seen:
            raise ConfigError(f"[[method]] #{i + 1}: duplicate method {name!r}")
        seen.add(name)
        count = int(m.get("seeds", default_count))
        if count < 1:
            raise ConfigError(f"[[method]] #{i + 1}: seeds must be >= 1")
        params = {k: v for k, v in m.items() if k not in ("name", "seeds")}
        allowed = WP_KEYS if name.endswith("_wp") else GP_KEYS
        for k in params:
            if k not in allowed:
                raise ConfigError(
                    f"[[method]] #{i + 1} ({name}): unknown key {k!r}"
                )
        methods.append(MethodSpec(name=name, seeds=count, params=params))

    out = raw.get("output", {})
    return ExperimentConfig(
        dataset=ds,
        minmax=bool(pre.get("minmax", True)),
        unit_ball=bool(pre.get("unit_ball", True)),
        test_fraction=float(pre.get("test_fraction", 0.2)),
        epsilons=epsilons,
        delta=delta,
        base_seed=base_seed,
        methods=methods,
        outdir=str(out.get("dir", "results")),
    )


def build_dataset(
    config: ExperimentConfig,
) -> tuple[Dataset, Dataset, str]:
    """Materialize (train, test, display-name) from the config.

    Synthetic data is generated already scaled; file data is split first,
    then min-max fitted on the training split only, then norm-capped.
    """
    ds = config.dataset
    root = RandomSource(config.base_seed)
    if ds["kind"] == "synthetic":
        full = synth_blobs(
            int(ds["classes"]),
            int(ds["n_per_class"]),
            int(ds["dim"]),
            float(ds["separation"]),
            root.split("dataset"),
        )
        name = f"blobs_c{ds['classes']}_d{ds['dim']}"
        train, test = stratified_split(full, config.test_fraction, root.split("split"))
        return train, test, name
    if ds["kind"] == "csv":
        full = load_csv(ds["path"], int(ds["label_column"]), bool(ds["has_header"]))
    else:
        full = load_libsvm(ds["path"])
    name = os.path.splitext(os.path.basename(ds["path"]))[0]
    train, test = stratified_split(full, config.test_fraction, root.split("split"))
    if config.minmax:
        scaler = fit_minmax(train)
        train = apply_minmax(scaler, train)
        test = apply_minmax(scaler, test)
    if config.unit_ball:
        train = project_unit_ball(train)
        test = project_unit_ball(test)
    return train, test, name


def _build_wp_config(params: dict) -> WpConfig:
    return WpConfig(
        C_over_n=float(params.get("C_over_n", 0.005)),
        tol=float(params.get("tol", 1e-4)),
        max_iter=int(params.get("max_iter", 200_000)),
        encoding=str(params.get("encoding", "crammer_singer")),
    )


def _build_gp_config(params: dict, n_train: int) -> GpConfig:
    if "q" in params:
        q = float(params["q"])
    elif "batch_size" in params:
        q = float(params["batch_size"]) / n_train
    else:
        q = 128.0 / n_train
    loss = LossParams(
        C=float(params.get("C", 1.0)),
        lam=float(params["lam"]) if "lam" in params else None,
        mu=float(params.get("mu", 1e-4)),
        varsigma=float(params.get("varsigma", 0.5)),
    )
    return GpConfig(
        loss=loss,
        R=float(params.get("R", 1.0)),
        T=int(params.get("T", 100)),
        q=q,
        schedule=str(params.get("schedule", "constant")),
        base_lr=float(params.get("base_lr", 0.1)),
        optimizer=str(params.get("optimizer", "plain")),
        beta1=float(params.get("beta1", 0.9)),
        beta2=float(params.get("beta2", 0.999)),
        adam_gamma=float(params.get("adam_gamma", 1e-8)),
        with_bias=bool(params.get("with_bias", True)),
        trace_every=int(params.get("trace_every", 1)),
    )


def _warm_start(name: str, cfg: WpConfig, train: Dataset):
    """Shared non-private solve for weight-perturbation methods.

    The solvers are deterministic and consume no randomness, so one solve
    serves every (epsilon, seed) cell of the method.
    """
    C = cfg.C_over_n * train.n
    if name == "pmsvm_wp":
        return solve_allinone(
            train, "cs_hinge", LossParams(C=C, mu=0.0, varsigma=0.0),
            tol=cfg.tol, max_iter=cfg.max_iter,
        )
    cols = [
        _solve_binary_hinge(
            train.features, train.relabel_binary(k), C, cfg.tol, cfg.max_iter
        )
        for k in range(train.num_classes)
    ]
    return np.stack(cols, axis=1)


def run_cell(
    spec: MethodSpec,
    train: Dataset,
    test: Dataset,
    budget: PrivacyBudget,
    seed: int,
    warm=None,
) -> TrainReport:
    rng = RandomSource(seed)
    if spec.name == "pmsvm_wp":
        cfg = _build_wp_config(spec.params)
        return pmsvm_wp(train, budget, cfg, rng, test, warm_model=warm)
    if spec.name == "ovr_wp":
        cfg = _build_wp_config(spec.params)
        return ovr_wp(train, budget, cfg, rng, test, warm_columns=warm)
    cfg = _build_gp_config(spec.params, train.n)
    fn = {"pmsvm_gp": pmsvm_gp, "pmsvm_agp": pmsvm_agp,
          "ovr_gp": ovr_gp, "linear_ce_gp": linear_ce_gp}[spec.name]
    return fn(train, budget, cfg, rng, test)


def run_experiment(
    config: ExperimentConfig, workers: int = 1
) -> ResultsTable:
    """Execute the full grid and write table.csv / table.md / reports/."""
    train, test, ds_name = build_dataset(config)
    outdir = config.outdir
    reports_dir = os.path.join(outdir, "reports")
    os.makedirs(reports_dir, exist_ok=True)

    # Non-private warm solves are shared across a method's cells; a solver
    # failure here fails all of that method's cells, not the run.
    warms: dict[str, object] = {}
    warm_errors: dict[str, str] = {}
    for spec in config.methods:
        if spec.name in ("pmsvm_wp", "ovr_wp"):
            try:
                warms[spec.name] = _warm_start(
                    spec.name, _build_wp_config(spec.params), train
                )
            except (SolverError, ValueError) as e:
                warm_errors[spec.name] = str(e)

    cells = []
    for spec in config.methods:
        for eps in config.epsilons:
            for idx in range(spec.seeds):
                cells.append((spec, eps, idx))

    rows: dict[tuple[str, float], ResultRow] = {}
    for spec in config.methods:
        for eps in config.epsilons:
            rows[(spec.name, eps)] = ResultRow(ds_name, spec.name, eps)

    def work(cell):
        """Returns (accuracy, wall_clock, failure); exactly one side is set."""
        spec, eps, idx = cell
        if spec.name in warm_errors:
            return None, None, warm_errors[spec.name]
        seed = cell_seed(config.base_seed, spec.name, eps, idx)
        budget = PrivacyBudget(eps, config.delta)
        try:
            report = run_cell(
                spec, train, test, budget, seed, warms.get(spec.name)
            )
        except Exception as e:  # noqa: BLE001 - cell isolation is the contract
            return None, None, f"{type(e).__name__}: {e}"
        fname = f"{spec.name}_eps{eps:g}_seed{idx}.txt"
        save_report(os.path.join(reports_dir, fname), report)
        return report.final_test_acc(), report.wall_clock, None

    # Single-writer reduction in declared cell order keeps aggregation
    # deterministic no matter how workers interleave.
    if workers <= 1:
        outcomes = [work(cell) for cell in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, cells))
    for (spec, eps, _idx), (acc, wc, failure) in zip(cells, outcomes):
        row = rows[(spec.name, eps)]
        if failure is not None:
            row.failures.append(failure)
        else:
            row.accuracies.append(acc)
            row.wall_clocks.append(wc)

    ordered = [
        rows[(spec.name, eps)]
        for spec in config.methods
        for eps in config.epsilons
    ]
    table = ResultsTable(rows=ordered)
    write_table_csv(os.path.join(outdir, "table.csv"), table)
    write_table_md(os.path.join(outdir, "table.md"), table)
    return table


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.12g}"


def write_table_csv(path: str, table: ResultsTable) -> None:
    """Deterministic columns only, so identical configs produce identical
    bytes; timing lives in the markdown table."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["dataset", "method", "epsilon", "mean_accuracy", "std_accuracy",
             "seeds", "status"]
        )
        for r in table.rows:
            w.writerow(
                [r.dataset, r.method, f"{r.epsilon:g}", _fmt(r.mean),
                 _fmt(r.std), len(r.accuracies), r.status]
            )


def write_table_md(path: str, table: ResultsTable) -> None:
    heads = ["dataset", "method", "eps", "accuracy", "seeds",
             "mean wall-clock (s)", "status"]
    body = []
    for r in table.rows:
        acc = "" if r.mean is None else (
            f"{r.mean:.3f}" + (f" ± {r.std:.3f}" if r.std is not None else "")
        )
        wc = f"{np.mean(r.wall_clocks):.2f}" if r.wall_clocks else ""
        body.append(
            [r.dataset, r.method, f"{r.epsilon:g}", acc, str(len(r.accuracies)),
             wc, r.status]
        )
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h)
              for i, h in enumerate(heads)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("| " + " | ".join(h.ljust(w) for h, w in zip(heads, widths)) + " |\n")
        fh.write("|" + "|".join("-" * (w + 2) for w in widths) + "|\n")
        for row in body:
            fh.write(
                "| " + " | ".join(v.ljust(w) for v, w in zip(row, widths)) + " |\n"
            )


# ---------------------------------------------------------------------------
# TrainReport serialization: key=value header, trace CSV block, model block.


def save_report(path: str, report: TrainReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"method={report.method}\n")
        fh.write(f"seed={report.seed}\n")
        fh.write(f"sigma={report.sigma:.17g}\n")
        if report.requested is not None:
            fh.write(f"epsilon_requested={report.requested.epsilon:.17g}\n")
            fh.write(f"delta_requested={report.requested.delta:.17g}\n")
        if report.consumed is not None:
            fh.write(f"epsilon_consumed={report.consumed.epsilon:.17g}\n")
            fh.write(f"delta_consumed={report.consumed.delta:.17g}\n")
        fh.write(f"wall_clock_s={report.wall_clock:.6f}\n")
        for k in sorted(report.config):
            fh.write(f"config.{k}={report.config[k]}\n")
        for k in sorted(report.extras):
            fh.write(f"extras.{k}={report.extras[k]}\n")
        fh.write("\n")
        fh.write("step,loss,train_acc,test_acc\n")
        for s, lo, ta, te in zip(
            report.steps, report.loss_trace, report.train_acc_trace,
            report.test_acc_trace,
        ):
            fh.write(f"{int(s)},{lo:.17g},{ta:.17g},{te:.17g}\n")
        fh.write("\n")
        fh.write(f"{report.model.d} {report.model.c} {int(report.model.with_bias)}\n")
        for wrow in report.model.weights:
            fh.write(" ".join(f"{v:.17g}" for v in wrow) + "\n")
        if report.model.bias is not None:
            fh.write(" ".join(f"{v:.17g}" for v in report.model.bias) + "\n")


def load_report(path: str) -> TrainReport:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    parts = text.split("\n\n")
    if len(parts) < 3:
        raise ValueError(f"{path}: malformed report (expected 3 blocks)")
    header, trace_block, model_block = parts[0], parts[1], parts[2]
    kv: dict[str, str] = {}
    for line in header.splitlines():
        k, _, v = line.partition("=")
        kv[k] = v
    lines = trace_block.splitlines()
    if not lines or lines[0] != "step,loss,train_acc,test_acc":
        raise ValueError(f"{path}: missing trace block")
    steps, loss, tracc, teacc = [], [], [], []
    for line in lines[1:]:
        s, lo, ta, te = line.split(",")
        steps.append(int(s))
        loss.append(float(lo))
        tracc.append(float(ta))
        teacc.append(float(te))
    mlines = model_block.splitlines()
    d, c, wb = (int(v) for v in mlines[0].split())
    W = np.array([[float(v) for v in mlines[1 + i].split()] for i in range(d)])
    bias = (
        np.array([float(v) for v in mlines[1 + d].split()]) if wb else None
    )
    requested = None
    if "epsilon_requested" in kv:
        requested = PrivacyBudget(
            float(kv["epsilon_requested"]), float(kv["delta_requested"])
        )
    consumed = None
    if "epsilon_consumed" in kv:
        consumed = PrivacyBudget(
            float(kv["epsilon_consumed"]), float(kv["delta_consumed"])
        )
    config = {
        k[len("config."):]: v for k, v in kv.items() if k.startswith("config.")
    }
    extras = {
        k[len("extras."):]: v for k, v in kv.items() if k.startswith("extras.")
    }
    return TrainReport(
        model=LinearModel(W, bias),
        method=kv.get("method", "?"),
        seed=int(kv.get("seed", 0)),
        sigma=float(kv.get("sigma", 0.0)),
        requested=requested,
        consumed=consumed,
        steps=np.array(steps),
        loss_trace=np.array(loss),
        train_acc_trace=np.array(tracc),
        test_acc_trace=np.array(teacc),
        wall_clock=float(kv.get("wall_clock_s", 0.0)),
        config=config,
        extras=extras,
    )


# ---------------------------------------------------------------------------
# Verification and query commands.


def verify_sensitivity(
    n: int = 40,
    d: int = 5,
    c: int = 3,
    trials: int = 200,
    C_over_n: float = 0.01,
    tol: float = 1e-4,
    base_seed: int = 0,
    max_iter: int = 400_000,
) -> dict:
    """Empirical leave-one-out check of the weight-sensitivity bound.

    For each trial: draw a dataset inside the unit ball, solve the exact
    single-slack objective, drop the last sample (keeping the per-sample
    slack weight fixed), re-solve, and compare the weight movement against
    (C/n) sqrt(2) ||x_last||. Slack on the comparison is 10 * tol to absorb
    solver precision. Returns worst observed ratio and the violation count.

    Solves go through the certified dual solver: its duality gap bounds the
    weight error by sqrt(2 * gap), which is driven far below the slack, so
    a reported violation reflects the bound, not solver noise.
    """
    if n > 200:
        raise ValueError("leave-one-out verification is capped at n = 200")
    if n < c + 1 or c < 2:
        raise ValueError("need n > c >= 2")
    root = RandomSource(base_seed)
    worst = 0.0
    violations = 0
    failures: list[str] = []
    done = 0
    for trial in range(trials):
        rng = root.split(trial)
        g = rng.gen
        nn = int(g.integers(c + 1, n + 1))
        dd = int(g.integers(2, d + 1))
        X = g.standard_normal((nn, dd))
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.maximum(norms, 1.0)  # rows inside the unit ball
        y = np.concatenate(
            [np.arange(c), g.integers(0, c, nn - c)]
        )  # every class present
        perm = g.permutation(nn)
        X, y = X[perm], y[perm]
        # nn > c, so some class repeats; park one of its samples at the end
        # so the leave-one-out dataset still contains every class.
        counts = np.bincount(y, minlength=c)
        j = int(np.flatnonzero(counts[y] >= 2)[-1])
        X[[j, -1]] = X[[-1, j]]
        y[[j, -1]] = y[[-1, j]]
        gap_tol = min(1e-10, (tol * tol) / 8.0)
        try:
            W_full, beta, _ = _cs_dual_solve(
                X, y, c, C_over_n, gap_tol, max_epochs=max_iter
            )
            W_loo, _, _ = _cs_dual_solve(
                X[:-1], y[:-1], c, C_over_n, gap_tol,
                max_epochs=max_iter, beta0=beta[:-1],
            )
        except SolverError as e:
            failures.append(f"trial {trial}: {e}")
            continue
        dist = float(np.linalg.norm(W_full - W_loo))
        x_norm = float(np.linalg.norm(X[-1]))
        bound = C_over_n * math.sqrt(2.0) * x_norm
        if dist > bound + 10.0 * tol:
            violations += 1
        if bound > 0:
            worst = max(worst, dist / bound)
        done += 1
    return {
        "trials": done,
        "violations": violations,
        "worst_ratio": worst,
        "slack": 10.0 * tol,
        "failures": failures,
    }


def accountant_trace(q: float, sigma: float, steps: int, delta: float) -> list[float]:
    """Spent epsilon after each of `steps` identical noisy steps."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return []
    orders = np.arange(2, 257, dtype=np.float64)
    per_step = _subsampled_gaussian_rdp(q, sigma, orders)
    out = []
    accum = np.zeros_like(orders)
    for _ in range(steps):
        accum = accum + per_step
        out.append(_rdp_to_eps(accum, orders, delta))
    return out


def curves_csv(report_paths: list[str], out) -> None:
    """Merge report traces into one long-format CSV for external plotting."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["run", "step", "train_loss", "train_acc", "test_acc"])
    for path in report_paths:
        report = load_report(path)
        if len(report.steps) == 0:
            raise ValueError(f"{path}: report contains no trace")
        run_id = os.path.splitext(os.path.basename(path))[0]
        for s, lo, ta, te in zip(
            report.steps, report.loss_trace, report.train_acc_trace,
            report.test_acc_trace,
        ):
            w.writerow([run_id, int(s), f"{lo:.12g}", f"{ta:.12g}", f"{te:.12g}"])
