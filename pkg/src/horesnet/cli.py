"""Command-line entry point: ``horesnet <command> ...``.

Every command writes its artifacts plus a ``report.json`` into a run
directory under the output root (``--out``, else ``$HORESNET_OUT``, else
``./runs``).  Exit codes: 0 success (recorded divergence included), 1
runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as D
from . import diagnostics as G
from . import oracle as O
from . import svg
from .network import (
    CheckpointError,
    ConfigError,
    NetworkShape,
    build,
    equivalent_depth,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .schemes import TABLEAUS, get_tableau
from .training import EpochRecord, SGD, TrainConfig, make_optimizer, schedule, train

SCHEMA_VERSION = 1
ENV_OUT = "HORESNET_OUT"
SWEEP_EPOCHS = 50


class UsageError(Exception):
    pass


@dataclass
class TaskSpec:
    name: str = "spirals"          # spirals | rings | blobs | cifar10
    n_per_class: int = 200
    classes: int = 2
    noise: float = 0.0
    test_per_class: int | None = None
    data_dir: str | None = None
    train_subset: int | None = None
    test_subset: int | None = None


@dataclass
class RunConfig:
    command: str = ""
    scheme: str = "euler"
    schemes: list[str] = field(default_factory=lambda: list(G.SCHEME_ORDER))
    depth: int = 58
    width: int = 16
    activation: str = "relu"
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    lr_grid: list[float] = field(default_factory=list)
    depths: list[int] = field(default_factory=list)
    seeds: int = 20
    threshold: float = 0.95
    out: str = ""
    run_name: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        task = TaskSpec(**d.pop("task", {}))
        tcfg = TrainConfig(**d.pop("train", {}))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(task=task, train=tcfg, **d)


# -- small helpers -----------------------------------------------------------

def parse_list(text: str, kind=str) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [kind(t) for t in items]
    except ValueError as e:
        raise UsageError(f"bad list {text!r}: {e}") from None


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive stop) or a comma list."""
    if ":" in text:
        try:
            start, stop, step = (float(v) for v in text.split(":"))
        except ValueError:
            raise UsageError(f"bad grid {text!r}; expected start:stop:step") from None
        if step <= 0 or stop < start:
            raise UsageError(f"bad grid {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    return parse_list(text, float)


def check_schemes(names: list[str]) -> list[str]:
    bad = [n for n in names if n not in TABLEAUS]
    if bad:
        raise UsageError(f"unknown scheme(s) {bad}; valid: {sorted(TABLEAUS)}")
    if not names:
        raise UsageError("empty scheme list")
    return names


def tableau_digest(name: str) -> str:
    blob = json.dumps(get_tableau(name).to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def load_task(spec: TaskSpec, seed: int) -> tuple[D.Dataset, D.Dataset]:
    if spec.name == "cifar10":
        if not spec.data_dir:
            raise UsageError("cifar10 task needs --data-dir")
        tr, te = D.read_cifar10_dir(spec.data_dir)
        if spec.train_subset:
            tr = tr.subset(np.arange(min(spec.train_subset, len(tr))))
        if spec.test_subset:
            te = te.subset(np.arange(min(spec.test_subset, len(te))))
        return tr, te
    if spec.name not in D.GENERATORS:
        raise UsageError(f"unknown task {spec.name!r}; valid: {sorted(D.GENERATORS) + ['cifar10']}")
    return D.make_task(spec.name, spec.n_per_class, spec.classes, spec.noise, seed, spec.test_per_class)


def shape_for(cfg: RunConfig, scheme: str, depth: int, data: D.Dataset) -> NetworkShape:
    if data.features.ndim == 4:
        return NetworkShape(depth, scheme, cfg.width, data.features.shape[1], data.classes, "conv2",
                            cfg.activation, data.features.shape[2])
    return NetworkShape(depth, scheme, cfg.width, data.features.shape[1], data.classes, "dense2", cfg.activation)


class RunWriter:
    """Single writer for a run directory; tracks every artifact it creates."""

    def __init__(self, root: Path, cfg: RunConfig):
        self.root = root
        self.cfg = cfg
        self.files: list[str] = []
        self.t0 = time.perf_counter()
        root.mkdir(parents=True, exist_ok=True)

    def _track(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.root / name

    def csv(self, name: str, header: list[str], rows) -> Path:
        path = self._track(name)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        return path

    def text(self, name: str, body: str) -> Path:
        path = self._track(name)
        path.write_text(body)
        return path

    def adopt(self, name: str) -> None:
        self._track(name)

    def report(self, records=None, results=None, schemes=()) -> Path:
        existing = [f for f in self.files if (self.root / f).exists()]
        report = {
            "schema_version": SCHEMA_VERSION,
            "config": self.cfg.to_dict(),
            "records": [r.to_dict() for r in (records or [])],
            "results": results or {},
            "tableau_digests": {s: tableau_digest(s) for s in schemes},
            "wall_clock_seconds": time.perf_counter() - self.t0,
            "artifacts": sorted(existing + ["report.json"]),
        }
        path = self.root / "report.json"
        path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
        return path


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    # JSON has no inf/nan; encode them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def out_root(cfg: RunConfig) -> Path:
    return Path(cfg.out or os.environ.get(ENV_OUT) or "runs")


# -- commands ----------------------------------------------------------------

def cmd_ode_verify(cfg: RunConfig, writer: RunWriter, h_list: list[float]) -> int:
    schemes = check_schemes(cfg.schemes)
    order_rows, err_rows, results = [], [], []
    series = {}
    all_ok = True
    for name in schemes:
        tab = get_tableau(name)
        for prob in O.problem_suite():
            est = O.measure_order(tab, prob, h_list)
            ok = O.within_tolerance(est)
            all_ok &= ok
            lo, hi = O.ORDER_TOLERANCE[name]
            order_rows.append([name, prob.name, est.order, est.residual, lo, hi, ok, est.note])
            for h, e in zip(est.h, est.errors):
                err_rows.append([name, prob.name, h, e, est.order])
            series[f"{name}/{prob.name}"] = (est.h, est.errors)
            results.append(asdict(est) | {"within_tolerance": ok})
            print(f"{name:26s} {prob.name:9s} order={est.order:7.3f}  [{lo:g}, {hi:g}]  "
                  f"{'ok' if ok else 'OUT OF TOLERANCE'}")
    writer.csv("orders.csv", ["scheme", "problem", "fitted_order", "residual", "lo", "hi", "within_tolerance",
                              "note"], order_rows)
    writer.csv("errors.csv", ["scheme", "problem", "h", "error", "fitted_order"], err_rows)
    writer.text("errors.svg", svg.line_chart(series, "global error vs step size", "h", "error", True, True))
    writer.report(results={"orders": results}, schemes=schemes)
    return 0 if all_ok else 1


def cmd_dump_tableau(name: str) -> int:
    check_schemes([name])
    tab = get_tableau(name)
    from .schemes import op_counts, peak_live_states, retained_shortcuts
    d = tab.to_dict()
    d["retained_shortcuts"] = retained_shortcuts(tab)
    d["peak_live_states"] = peak_live_states(tab)
    d["op_counts"] = op_counts(tab)
    print(json.dumps(_jsonable(d), indent=2))
    return 0


def _ckpt_name(epoch: int) -> str:
    return f"checkpoint-epoch{epoch:04d}.ckpt"


def cmd_train(cfg: RunConfig, writer: RunWriter, resume: str | None) -> int:
    check_schemes([cfg.scheme])
    tr, te = load_task(cfg.task, cfg.seed)
    tcfg = cfg.train
    previous: list[EpochRecord] = []
    start_epoch, initial_loss = 0, None
    if resume:
        net, extra, leftover = load_checkpoint(resume)
        start_epoch = int(extra["next_epoch"])
        initial_loss = extra.get("initial_loss")
        previous = [EpochRecord(**{k: float(v) if isinstance(v, str) else v for k, v in r.items()})
                    for r in extra.get("records", [])]
        opt = make_optimizer(net, tcfg)
        for i, v in enumerate(opt.velocity):
            v[...] = leftover[f"velocity.{i}"]
    else:
        net = build(shape_for(cfg, cfg.scheme, cfg.depth, tr), cfg.seed)
        opt = make_optimizer(net, tcfg)
    history = list(previous)

    def on_epoch(rec: EpochRecord, optimizer: SGD, init: float) -> None:
        history.append(rec)
        every = tcfg.checkpoint_every
        if every and (rec.epoch + 1) % every == 0 and not rec.diverged:
            _save(net, writer, _ckpt_name(rec.epoch + 1), rec.epoch + 1, init, history, optimizer)
        print(f"epoch {rec.epoch:4d} lr={rec.lr:.3g} loss={rec.train_loss:.4f} acc={rec.train_acc:.3f} "
              f"test_acc={rec.test_acc:.3f}{' DIVERGED' if rec.diverged else ''}", flush=True)

    records = train(net, tr, tcfg, te, opt, start_epoch, initial_loss, on_epoch)
    init = initial_loss
    if init is None and records:
        init = records[0].train_loss
    _save(net, writer, "final.ckpt", start_epoch + len(records), init, history, opt)
    writer.csv("records.csv", list(EpochRecord.__dataclass_fields__), [list(r.to_dict().values()) for r in history])
    if history:
        xs = [r.epoch for r in history]
        writer.text("curves.svg", svg.line_chart({"train": (xs, [r.train_acc for r in history]),
                                                  "test": (xs, [r.test_acc for r in history])},
                                                 f"{cfg.scheme} depth {cfg.depth}", "epoch", "accuracy"))
    trainable, extra_h = param_count(net)
    diverged = bool(history and history[-1].diverged)
    writer.report(history, {"parameters": trainable, "extra_h": extra_h, "diverged": diverged,
                            "resumed_from": resume}, [cfg.scheme])
    return 0


def _save(net, writer: RunWriter, name: str, next_epoch: int, initial_loss, history, opt: SGD) -> None:
    extra = {"next_epoch": next_epoch, "initial_loss": initial_loss, "records": [r.to_dict() for r in history],
             "config": writer.cfg.to_dict()}
    arrays = [(f"velocity.{i}", v) for i, v in enumerate(opt.velocity)]
    save_checkpoint(net, writer.root / name, _jsonable(extra), arrays)
    writer.adopt(name)
    writer.adopt(name + ".json")


def cmd_sweep(kind: str, cfg: RunConfig, writer: RunWriter) -> int:
    schemes = check_schemes(cfg.schemes)
    task = load_task(cfg.task, cfg.seed)
    tr, te = task
    results = {}
    if kind == "init-probe":
        if cfg.seeds < 1:
            raise UsageError("--seeds must be >= 1")
        probe = G.probe_batch(te, 128, cfg.seed)
        rows, seed_rows, ranges = [], [], {}
        for s in schemes:
            shape = shape_for(cfg, s, equivalent_depth(s, cfg.depth), tr)
            r = G.init_probe(shape, range(cfg.seed, cfg.seed + cfg.seeds), probe)
            rows.append([s, shape.depth, r.min, r.max, r.spread, r.median_log_spread])
            seed_rows += [[s, shape.depth, sd, lo, sp] for sd, lo, sp in zip(r.seeds, r.losses, r.sample_spreads)]
            ranges[s] = (r.min, r.max)
            results[s] = r.to_dict()
            print(f"{s:26s} depth={shape.depth:3d} min={r.min:.4g} max={r.max:.4g} spread={r.spread:.4g} "
                  f"median_log10_spread={r.median_log_spread:.3f}")
        writer.csv("init_probe.csv", ["scheme", "depth", "min", "max", "spread", "median_log_spread"], rows)
        writer.csv("init_probe_seeds.csv", ["scheme", "depth", "seed", "loss", "sample_spread"], seed_rows)
        writer.text("init_probe.svg", svg.range_bars(ranges, "untrained loss range over seeds", "loss"))
    elif kind == "lr":
        if not cfg.lr_grid:
            raise UsageError("empty learning-rate grid")
        rows, strip = [], {}
        for s in schemes:
            shape = shape_for(cfg, s, equivalent_depth(s, cfg.depth), tr)
            r = G.lr_sweep(shape, cfg.lr_grid, cfg.train.epochs, task, cfg.train, cfg.seed)
            rows += [[s, shape.depth, lr, d, l, a]
                     for lr, d, l, a in zip(r.lrs, r.diverged, r.final_train_loss, r.final_train_acc)]
            strip[s] = r.diverged
            results[s] = r.to_dict()
            print(f"{s:26s} depth={shape.depth:3d} max_stable_lr={r.max_stable_lr}")
        writer.csv("lr_sweep.csv", ["scheme", "depth", "lr", "diverged", "final_train_loss", "final_train_acc"],
                   rows)
        writer.text("lr_sweep.svg", svg.heat_strip(strip, cfg.lr_grid, "divergence by initial lr", "lr"))
    elif kind == "degradation":
        if not cfg.depths:
            raise UsageError("empty depth list")
        rows, series = [], {}
        for s in schemes:
            tmpl = shape_for(cfg, s, cfg.depths[0], tr)
            r = G.degradation_sweep(s, cfg.depths, task, cfg.train, tmpl, range(cfg.seed, cfg.seed + cfg.seeds))
            rows += [[s, d, a, nd] for d, a, nd in zip(r.depths, r.accuracy, r.diverged)]
            series[s] = (r.depths, r.accuracy)
            results[s] = r.to_dict()
            print(f"{s:26s} peak_depth={r.peak_depth} first_drop_depth={r.first_drop_depth}")
        writer.csv("degradation.csv", ["scheme", "depth", "test_accuracy", "diverged_runs"], rows)
        writer.text("degradation.svg", svg.line_chart(series, "final test accuracy vs depth", "depth", "accuracy"))
    elif kind == "time-to-threshold":
        rows = []
        for s in schemes:
            shape = shape_for(cfg, s, equivalent_depth(s, cfg.depth), tr)
            r = G.time_to_threshold(shape, task, cfg.train, cfg.threshold, range(cfg.seed, cfg.seed + cfg.seeds))
            rows.append([s, shape.depth, cfg.threshold, r.epochs, r.seconds])
            results[s] = r.to_dict()
            print(f"{s:26s} depth={shape.depth:3d} epochs={r.epochs} seconds={r.seconds:.3f}")
        writer.csv("time_to_threshold.csv", ["scheme", "depth", "threshold", "epochs", "seconds"], rows)
        writer.text("time_to_threshold.svg",
                    svg.range_bars({r[0]: (0.0, r[3]) for r in rows}, f"epochs to {cfg.threshold:g} train accuracy",
                                   "epochs", logy=False))
    else:
        raise UsageError(f"unknown sweep {kind!r}")
    writer.report(results=results, schemes=schemes)
    return 0


def cmd_report(run_dir: str) -> int:
    path = Path(run_dir) / "report.json"
    report = json.loads(path.read_text())
    cfg = report.get("config", {})
    print(f"command: {cfg.get('command')}  schema: {report.get('schema_version')}  "
          f"wall clock: {float(report.get('wall_clock_seconds', 0)):.2f}s")
    recs = report.get("records", [])
    if recs:
        last = recs[-1]
        print(f"epochs: {len(recs)}  final train acc: {last['train_acc']}  test acc: {last['test_acc']}  "
              f"diverged: {last['diverged']}")
    missing = [f for f in report.get("artifacts", []) if not (Path(run_dir) / f).exists()]
    for f in report.get("artifacts", []):
        print(("  MISSING " if f in missing else "  ") + f)
    return 1 if missing else 0


# -- argument parsing ----------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON RunConfig (or a report.json); flags override it")
    p.add_argument("--out", help=f"output root (default ${ENV_OUT} or ./runs)")
    p.add_argument("--run-name", help="run directory name under the output root")
    p.add_argument("--seed", type=int)


def _model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--activation", choices=["relu", "tanh"])
    p.add_argument("--task", choices=sorted(D.GENERATORS) + ["cifar10"])
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--data-dir")
    p.add_argument("--train-subset", type=int)
    p.add_argument("--test-subset", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--milestones", help="comma list; default rescales the reference schedule")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="horesnet", description="Residual networks built from RK tableaux.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ode-verify", help="measure convergence orders on the test-problem suite")
    _common(p)
    p.add_argument("--schemes", default="euler,midpoint,rk4,verner,verner-canonical")
    p.add_argument("--h-exponents", default="2:7", help="h = 2^-a ... 2^-b")

    p = sub.add_parser("dump-tableau", help="print a tableau as JSON")
    p.add_argument("scheme")

    p = sub.add_parser("train", help="train one network")
    _common(p)
    _model(p)
    p.add_argument("--scheme")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("sweep", help="diagnostic sweeps")
    p.add_argument("kind", choices=["init-probe", "lr", "degradation", "time-to-threshold"])
    _common(p)
    _model(p)
    p.add_argument("--schemes")
    p.add_argument("--scheme", help="alias for a single-entry --schemes")
    p.add_argument("--grid", help="lr grid, start:stop:step or comma list")
    p.add_argument("--depths", help="comma list of depths")
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("report", help="summarise a run directory")
    p.add_argument("run_dir")
    return ap


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    raw = json.loads(Path(path).read_text())
    if "schema_version" in raw and "config" in raw:
        raw = raw["config"]
    return raw


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = RunConfig().to_dict()
    given = _load_config(getattr(args, "config", None))
    if not given and getattr(args, "resume", None):
        # a resumed run replays the configuration stored in its checkpoint
        from .network import read_checkpoint
        given = read_checkpoint(args.resume)[0]["extra"].get("config", {})
        given = {k: v for k, v in given.items() if k not in ("out", "run_name")}
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k].update(v)
        else:
            base[k] = v
    a = vars(args)

    def put(key, value, section=None):
        if value is None:
            return
        (base[section] if section else base)[key] = value

    put("command", args.command)
    put("seed", a.get("seed"))
    put("out", a.get("out"))
    put("run_name", a.get("run_name"))
    put("scheme", a.get("scheme"))
    put("depth", a.get("depth"))
    put("width", a.get("width"))
    put("activation", a.get("activation"))
    put("seeds", a.get("seeds"))
    put("threshold", a.get("threshold"))
    if a.get("schemes"):
        base["schemes"] = parse_list(a["schemes"])
    elif args.command == "sweep" and a.get("scheme"):
        base["schemes"] = [a["scheme"]]
    if a.get("grid") is not None:
        base["lr_grid"] = parse_grid(a["grid"])
    if a.get("depths") is not None:
        base["depths"] = parse_list(a["depths"], int)
    put("name", a.get("task"), "task")
    put("n_per_class", a.get("n_per_class"), "task")
    put("noise", a.get("noise"), "task")
    put("data_dir", a.get("data_dir"), "task")
    put("train_subset", a.get("train_subset"), "task")
    put("test_subset", a.get("test_subset"), "task")
    if base["task"]["name"] == "cifar10":
        base["task"]["classes"] = 10
    put("lr0", a.get("lr"), "train")
    put("batch_size", a.get("batch_size"), "train")
    put("checkpoint_every", a.get("checkpoint_every"), "train")
    if args.command == "sweep" and a.get("epochs") is None and "epochs" not in given.get("train", {}):
        a["epochs"] = SWEEP_EPOCHS
    if a.get("epochs") is not None:
        base["train"]["epochs"] = a["epochs"]
        if a.get("milestones") is None and "milestones" not in given.get("train", {}):
            base["train"]["milestones"] = schedule(a["epochs"]) if a["epochs"] else []
    if a.get("milestones") is not None:
        base["train"]["milestones"] = parse_list(a["milestones"], int)
    base["train"]["seed"] = base["seed"]
    try:
        return RunConfig.from_dict(base)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid configuration: {e}") from None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "dump-tableau":
            return cmd_dump_tableau(args.scheme)
        if args.command == "report":
            return cmd_report(args.run_dir)
        cfg = resolve_config(args)
        if args.command == "ode-verify":
            try:
                lo, hi = (int(v) for v in args.h_exponents.split(":"))
            except ValueError:
                raise UsageError(f"bad --h-exponents {args.h_exponents!r}; expected a:b") from None
            if hi - lo < 3:
                raise UsageError("need at least 4 step sizes")
            cfg.schemes = check_schemes(parse_list(args.schemes))
        name = cfg.run_name or (args.command if args.command != "sweep" else f"sweep-{args.kind}")
        writer = RunWriter(out_root(cfg) / name, cfg)
        if args.command == "ode-verify":
            return cmd_ode_verify(cfg, writer, [2.0 ** -e for e in range(lo, hi + 1)])
        if args.command == "train":
            return cmd_train(cfg, writer, args.resume)
        return cmd_sweep(args.kind, cfg, writer)
    except (UsageError, ConfigError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (OSError, CheckpointError, D.FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
