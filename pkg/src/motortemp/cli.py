"""Command-line front end.

Exit codes: 0 ok, 1 usage, 2 data/file error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path


from . import __version__
from .data_model import INPUTS, TARGETS, atomic_write_text, load_dataset, parse_inputs_csv, split_leave_one_out, write_dataset
from .errors import ConfigError, DataError, MotorTempError, NumericError
from .hypersearch import SearchSpace, search
from .preprocess import PreprocessConfig
from .synth import LptnParams, default_params, generate_dataset
from .training import Checkpoint, TrainConfig, evaluate, loo_report_json, predict, run_loo_folds, spec_from_dict, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def default_config() -> dict:
    text = resources.files("motortemp").joinpath("configs/defaults.json").read_text(encoding="utf-8")
    return json.loads(text)


def resolve_config(model: str | None, config_path: str | None, seed: int | None) -> dict:
    """Committed defaults for ``model`` overlaid with a user JSON file and the seed flag."""
    base = default_config()
    out = {"preprocess": dict(base["preprocess"]), "n_val": base["n_val"], "lptn": None, "space": None}
    if model is not None:
        out["model"] = dict(base["models"][model]["model"])
        out["train"] = dict(base["models"][model]["train"])
    if config_path:
        try:
            user = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_path}: invalid JSON ({e})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{config_path}: expected a JSON object")
        for key in ("preprocess", "model", "train"):
            if key in user:
                if model is None and key in ("model", "train"):
                    continue
                if key == "model" and user["model"].get("kind", model) != model:
                    raise ConfigError(f"config model kind {user['model'].get('kind')!r} does not match --model {model}")
                out[key].update(user[key])
        for key in ("n_val", "lptn", "space"):
            if key in user:
                out[key] = user[key]
    if seed is not None and "train" in out:
        out["train"]["seed"] = seed
    return out


def _typed(resolved: dict):
    pcfg = PreprocessConfig.from_dict(resolved["preprocess"])
    spec = spec_from_dict(resolved["model"])
    cfg = TrainConfig.from_dict(resolved["train"])
    return spec, pcfg, cfg


def _write_run(out: Path, command: str, argv: list, resolved: dict, extra: dict | None = None) -> None:
    doc = {"version": __version__, "command": command, "argv": list(argv), "config": resolved}
    if extra:
        doc.update(extra)
    atomic_write_text(out / "run.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    return repr(float(v))


def traces_csv(ev) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "target", "actual_C", "predicted_C", "error_C"])
    for j, name in enumerate(TARGETS):
        for i in range(len(ev.t)):
            a, p = ev.actual[i, j], ev.predicted[i, j]
            w.writerow([str(int(ev.t[i])), name, _fmt(a), _fmt(p), _fmt(a - p)])
    return buf.getvalue()


def inputs_csv(t, inputs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *INPUTS])
    for i in range(len(t)):
        w.writerow([str(int(t[i]))] + [_fmt(v) for v in inputs[i]])
    return buf.getvalue()


def _load_checkpoint(path) -> Checkpoint:
    try:
        return Checkpoint.from_json(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None


# ------------------------------------------------------------------ commands


def cmd_generate(a, argv):
    resolved = resolve_config(None, a.config, None)
    params = LptnParams.from_dict(resolved["lptn"]) if resolved["lptn"] else default_params()
    ds = generate_dataset(a.profiles, a.hours, params, a.seed)
    out = Path(a.out)
    write_dataset(ds, out)
    resolved["lptn"] = params.to_dict()
    _write_run(out, "generate", argv, resolved, {"seed": a.seed, "profiles": a.profiles, "hours": a.hours})
    print(f"wrote {len(ds.profiles)} profiles ({ds.total_seconds / 3600:.1f} h) to {out}")


def cmd_train(a, argv):
    resolved = resolve_config(a.model, a.config, a.seed)
    spec, pcfg, cfg = _typed(resolved)
    ds = load_dataset(a.data)
    test_id = a.test_id or ds.ids[0]
    n_val = a.n_val if a.n_val is not None else resolved["n_val"]
    split = split_leave_one_out(ds, test_id, n_val, cfg.seed)
    ckpt, hist = train(spec, split, ds, pcfg, cfg)
    out = Path(a.out)
    atomic_write_text(out / "checkpoint.json", ckpt.to_json())
    _write_run(out, "train", argv, resolved, {"split": split.to_dict()})
    print(f"trained {spec.kind}: best epoch {hist.best_epoch} val loss {hist.val_loss[hist.best_epoch]:.6g} ({hist.stop_reason})")


def _metrics_json(report) -> str:
    return json.dumps(report.to_list(), indent=2) + "\n"


def cmd_evaluate(a, argv):
    ckpt = _load_checkpoint(a.checkpoint)
    ds = load_dataset(a.data)
    ids = [a.profile] if a.profile else (list(ckpt.split.test_ids) if ckpt.split else ds.ids)
    out = Path(a.out)
    for pid in ids:
        ev = evaluate(ckpt, ds.get(pid))
        atomic_write_text(out / f"{pid}_metrics.json", _metrics_json(ev.report))
        atomic_write_text(out / f"{pid}_traces.csv", traces_csv(ev))
        atomic_write_text(out / f"{pid}_inputs.csv", inputs_csv(ev.t, ev.inputs))
        print(f"{pid}: " + ", ".join(f"{m.target} mse={m.mse:.4g}" for m in ev.report.targets))
    _write_run(out, "evaluate", argv, {"checkpoint": str(a.checkpoint), "profiles": ids})


def cmd_predict(a, argv):
    ckpt = _load_checkpoint(a.checkpoint)
    try:
        with open(a.input, encoding="utf-8", newline="") as fh:
            t, X, Y = parse_inputs_csv(fh)
    except FileNotFoundError:
        raise DataError(f"input file not found: {a.input}") from None
    Yhat = predict(ckpt, X)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *(f"{n}_pred" for n in TARGETS)])
    for i in range(len(t)):
        w.writerow([str(int(t[i]))] + [_fmt(v) for v in Yhat[i]])
    out = Path(a.out)
    atomic_write_text(out / "predictions.csv", buf.getvalue())
    _write_run(out, "predict", argv, {"checkpoint": str(a.checkpoint), "input": str(a.input)})
    print(f"wrote {len(t)} predictions to {out / 'predictions.csv'}")


def cmd_loo(a, argv):
    resolved = resolve_config(a.model, a.config, a.seed)
    spec, pcfg, cfg = _typed(resolved)
    n_val = a.n_val if a.n_val is not None else resolved["n_val"]
    ds = load_dataset(a.data)
    folds, summary = run_loo_folds(ds, pcfg, cfg, spec, n_val=n_val, jobs=a.jobs)
    out = Path(a.out)
    atomic_write_text(out / "folds.json", loo_report_json(folds, summary, spec, pcfg, cfg, n_val))
    _write_run(out, "loo", argv, resolved)
    for f in folds:
        print(f"fold {f.fold} ({f.test_id}): mean mse {f.report.mean_mse:.4g}")


def cmd_search(a, argv):
    resolved = resolve_config(a.model, a.config, a.seed)
    _, pcfg, cfg = _typed(resolved)
    n_val = a.n_val if a.n_val is not None else resolved["n_val"]
    space = SearchSpace.from_dict(resolved.get("space") or {})
    ds = load_dataset(a.data)
    board = search(space, a.model, ds, pcfg, cfg, a.budget, a.seed, n_val=n_val, jobs=a.jobs)
    out = Path(a.out)
    atomic_write_text(out / "leaderboard.json", board.to_json())
    _write_run(out, "search", argv, resolved, {"space": space.to_dict()})
    print(f"{len(board.entries)} ranked, {len(board.failed)} failed")
    if board.best:
        print(f"best: {json.dumps(board.best['config']['model'])} val loss {board.best['mean_val_loss']:.6g}")


def cmd_replay(a, argv):
    try:
        run = json.loads(Path(a.run_json).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"run file not found: {a.run_json}") from None
    old = list(run["argv"])
    if "--out" in old:
        old[old.index("--out") + 1] = a.out
    else:
        old += ["--out", a.out]
    return dispatch(old)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="motortemp", description="Motor temperature estimation pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, model=True, data=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="JSON overrides")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory or manifest")
        if model:
            sp.add_argument("--model", required=True, choices=["linear", "mlp", "cnn"])

    g = sub.add_parser("generate", help="synthesize a dataset")
    common(g, model=False, data=False)
    g.add_argument("--profiles", type=int, default=18)
    g.add_argument("--hours", type=float, default=150.0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model on a leave-one-out split")
    common(t)
    t.add_argument("--test-id", help="held-out profile (default: first in manifest)")
    t.add_argument("--n-val", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="metrics and traces for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--profile", help="profile id (default: the checkpoint's test profile)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="predict temperatures for an input CSV")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    lo = sub.add_parser("loo", help="leave-one-profile-out evaluation")
    common(lo)
    lo.add_argument("--n-val", type=int)
    lo.add_argument("--jobs", type=int, default=1)
    lo.set_defaults(func=cmd_loo)

    s = sub.add_parser("search", help="random hyperparameter search")
    common(s)
    s.add_argument("--budget", type=int, default=10)
    s.add_argument("--n-val", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_search)

    r = sub.add_parser("replay", help="re-run a recorded run.json into a new directory")
    r.add_argument("run_json")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_replay)
    return p


def dispatch(argv) -> int:
    argv = list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        rc = args.func(args, argv)
        return EXIT_OK if rc is None else rc
    except UsageError as e:
        print(f"{e}\n{parser.format_usage().strip()}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, MotorTempError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None) -> None:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
