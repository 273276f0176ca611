"""Command-line entry point orchestrating all pipelines.

Subcommands: blur, features, train, cv, ablate, kappa, study, serve, synth.
Values resolve flag > config file > GMA_BENCH_SEED (seed only) > default,
and every run writes a ``manifest.json`` (resolved parameters, config hash,
versions) next to its outputs so any output directory can be reproduced.

Exit codes: 0 success, 1 configuration errors, 2 data errors, 3 internal.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agreement import agreement_report, parse_label_csv
from .blur import BlurParams, blur_snippet
from .errors import GmaBenchError
from .evaluation import (
    AblationGrid,
    ablation_run,
    cv_report_csv,
    format_ablation_report,
    run_cv,
    ttest_two_sample,
)
from .features import FeatureMatrix, build_features
from .frameio import read_frames_dir, read_raw_stream, write_frames_dir, write_raw_stream
from .keypoints import (
    KeypointMode,
    SchemaMap,
    default_body25_schema,
    load_snippet_dir,
    write_snippet_dir,
)
from .neural import NetworkSpec, TrainConfig, save_weights, train
from .study import StudyStore, plan_subsets
from .synth import SynthSpec, gen_snippet, gen_snippets, render_frames

SEED_ENV_VAR = "GMA_BENCH_SEED"

# Flag defaults declared once so --help shows them and the config
# resolver can fall back to them.
DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "mask_width": 150.0,
    "mask_height": 68.0,
    "kernel": 25,
    "noise_max": 25,
    "smoothing": 0.5,
    "threshold": 0.35,
    "mode": "with_head",
    "filters": 64,
    "filter_len": 7,
    "fc_sizes": "200,100",
    "dropout": 0.1,
    "learning_rate": 1e-3,
    "batch_size": 32,
    "val_fraction": 0.125,
    "patience": 10,
    "max_epochs": 500,
    "k": 5,
    "repeats": 10,
    "count": 3,
    "size": 280,
    "per_class": 25,
    "missing_rate": 0.0,
    "contamination_rate": 0.0,
    "host": "127.0.0.1",
    "port": 8000,
}


class CliError(Exception):
    """Configuration-level failure; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except ValueError as exc:
            raise CliError(f"invalid JSON config: {exc}") from None
    try:
        import tomllib as toml  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        import tomli as toml
    try:
        return toml.loads(text)
    except toml.TOMLDecodeError as exc:
        raise CliError(f"invalid TOML config: {exc}") from None


class Resolver:
    """flag > config section > config top level > env (seed) > default."""

    def __init__(self, args: argparse.Namespace, command: str):
        self.args = vars(args)
        self.config = _load_config(self.args.get("config"))
        self.section = self.config.get(command, {}) if isinstance(self.config, dict) else {}
        self.resolved: dict = {}

    def get(self, name: str, cast=None):
        value = self.args.get(name)
        if value is None:
            value = self.section.get(name) if isinstance(self.section, dict) else None
        if value is None and isinstance(self.config, dict):
            value = self.config.get(name)
        if value is None and name == "seed":
            env = os.environ.get(SEED_ENV_VAR)
            if env is not None:
                value = env
        if value is None:
            value = DEFAULTS.get(name)
        if value is not None and cast is not None:
            try:
                value = cast(value)
            except (TypeError, ValueError) as exc:
                raise CliError(f"bad value for {name}: {exc}") from None
        self.resolved[name] = value
        return value

    def explicit(self, name: str):
        """Flag or config value only, without built-in defaults."""
        value = self.args.get(name)
        if value is None and isinstance(self.section, dict):
            value = self.section.get(name)
        if value is None and isinstance(self.config, dict):
            value = self.config.get(name)
        return value


def _parse_fc_sizes(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _write_manifest(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    params = {k: v for k, v in sorted(resolved.items()) if v is not None}
    canon = json.dumps(params, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "params": params,
        "config_hash": hashlib.sha256(canon.encode("utf-8")).hexdigest(),
        "versions": {"gmabench": __version__, "numpy": np.__version__},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)


def _schema(res: Resolver) -> SchemaMap:
    path = res.get("schema")
    return SchemaMap.load(path) if path else default_body25_schema()


def _blur_params(res: Resolver) -> BlurParams:
    return BlurParams(
        mask_width=res.get("mask_width", float),
        mask_height=res.get("mask_height", float),
        kernel_size=res.get("kernel", int),
        noise_max=res.get("noise_max", int),
        smoothing=res.get("smoothing", float),
        reliability_threshold=res.get("threshold", float),
        seed=res.get("seed", int),
    )


def _train_config(res: Resolver) -> TrainConfig:
    return TrainConfig(
        learning_rate=res.get("learning_rate", float),
        batch_size=res.get("batch_size", int),
        val_fraction=res.get("val_fraction", float),
        patience=res.get("patience", int),
        max_epochs=res.get("max_epochs", int),
        seed=res.get("seed", int),
    )


def _network_spec(res: Resolver, channels: int) -> NetworkSpec:
    return NetworkSpec(
        channels=channels,
        filters=res.get("filters", int),
        filter_len=res.get("filter_len", int),
        fc_sizes=_parse_fc_sizes(res.get("fc_sizes")),
        dropout=res.get("dropout", float),
    )


def _load_corpus(data_dir: Path, schema: SchemaMap, mode: KeypointMode):
    """Features and labels from a synth-format corpus directory."""
    labels_path = data_dir / "labels.csv"
    if not labels_path.exists():
        raise GmaBenchError(f"missing {labels_path}")
    rows = list(csv.reader(labels_path.read_text(encoding="utf-8").splitlines()))
    mats, labels = [], []
    for snippet_id, label in rows[1:]:
        snippet = load_snippet_dir(data_dir / snippet_id / "keypoints", schema)
        mats.append(build_features(snippet, mode).values)
        labels.append(int(label))
    return np.stack(mats).astype(np.float32), np.array(labels, dtype=np.int64)


# --- subcommand implementations ------------------------------------------


def _cmd_synth(res: Resolver) -> int:
    out = Path(res.get("out"))
    per_class = res.get("per_class", int)
    seed = res.get("seed", int)
    render = bool(res.get("render"))
    missing = res.get("missing_rate", float)
    schema = _schema(res)
    out.mkdir(parents=True, exist_ok=True)
    label_rows = [("snippet_id", "label")]
    for i in range(per_class):
        for label in (0, 1):
            spec = SynthSpec(label=label, seed=seed + 2 * i + label, missing_rate=missing)
            snippet = gen_snippet(spec)
            write_snippet_dir(snippet, schema, out / snippet.snippet_id / "keypoints")
            if render:
                meta = {
                    "snippet_id": snippet.snippet_id,
                    "fps": snippet.fps,
                    "width": snippet.width,
                    "height": snippet.height,
                }
                write_frames_dir(render_frames(snippet), out / snippet.snippet_id / "frames", meta)
            label_rows.append((snippet.snippet_id, str(label)))
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(label_rows)
    _write_manifest(out, "synth", res.resolved)
    return 0


def _cmd_blur(res: Resolver) -> int:
    keypoints_dir = Path(res.get("keypoints"))
    frames_path = Path(res.get("frames"))
    out = Path(res.get("out"))
    params = _blur_params(res)
    jobs = res.get("jobs", int)
    schema = _schema(res)
    snippet = load_snippet_dir(keypoints_dir, schema)
    if frames_path.is_dir():
        frames, meta = read_frames_dir(frames_path)
    else:
        frames, meta = read_raw_stream(frames_path)
    blurred, trajectory = blur_snippet(frames, snippet, params, jobs=jobs)
    if out.suffix:  # treat as a raw stream file
        write_raw_stream(blurred, out, meta)
        out_dir = out.parent
    else:
        write_frames_dir(blurred, out, meta)
        out_dir = out
    trajectory.save_csv(out_dir / "trajectory.csv")
    _write_manifest(out_dir, "blur", res.resolved)
    return 0


def _cmd_features(res: Resolver) -> int:
    keypoints_dir = Path(res.get("keypoints"))
    out = Path(res.get("out"))
    mode = KeypointMode(res.get("mode"))
    schema = _schema(res)
    snippet = load_snippet_dir(keypoints_dir, schema)
    matrix = build_features(snippet, mode)
    out.parent.mkdir(parents=True, exist_ok=True)
    matrix.save(out)
    csv_path = res.get("csv")
    if csv_path:
        Path(csv_path).write_text(matrix.to_csv(), encoding="utf-8")
    _write_manifest(out.parent, "features", res.resolved)
    return 0


def _dataset_from_args(res: Resolver, mode: KeypointMode):
    data = res.get("data")
    if data is not None:
        return _load_corpus(Path(data), _schema(res), mode)
    per_class = res.get("gen_per_class")
    if per_class is None:
        raise CliError("need --data or --gen-per-class")
    snippets, y = gen_snippets(int(per_class), seed=res.get("seed", int))
    x = np.stack([build_features(s, mode).values for s in snippets]).astype(np.float32)
    return x, y


def _cmd_train(res: Resolver) -> int:
    mode = KeypointMode(res.get("mode"))
    x, y = _dataset_from_args(res, mode)
    spec = _network_spec(res, channels=x.shape[2])
    config = _train_config(res)
    net, history = train(x, y, spec, config)
    out = Path(res.get("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(save_weights(net))
    history_path = res.get("history")
    if history_path:
        Path(history_path).write_text(history.to_csv(), encoding="utf-8")
    _write_manifest(out.parent, "train", res.resolved)
    print(f"best validation accuracy {history.best_val_acc:.4f} at epoch {history.best_epoch}")
    return 0


def _cmd_cv(res: Resolver) -> int:
    out = Path(res.get("out"))
    k = res.get("k", int)
    repeats = res.get("repeats", int)
    seed = res.get("seed", int)
    jobs = res.get("jobs", int)
    config = _train_config(res)
    results = {}
    chosen = res.explicit("mode")
    modes = (
        [KeypointMode(chosen)]
        if chosen
        else [KeypointMode.WITH_HEAD, KeypointMode.WITHOUT_HEAD]
    )
    for mode in modes:
        x, y = _dataset_from_args(res, mode)
        spec = _network_spec(res, channels=x.shape[2])
        results[mode.value] = run_cv(
            x, y, spec, config, k=k, repeats=repeats, seed=seed, jobs=jobs
        )
        print(f"{mode.value}: {results[mode.value].format_row()}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(cv_report_csv(results), encoding="utf-8")
    if len(results) == 2:
        t = ttest_two_sample(
            results["with_head"].fold_accuracies,
            results["without_head"].fold_accuracies,
        )
        print(f"two-sample t-test: t={t.t:.4f} df={t.df:.0f} p={t.p:.4f}")
    _write_manifest(out.parent, "cv", res.resolved)
    return 0


def _cmd_ablate(res: Resolver) -> int:
    store_path = Path(res.get("store"))
    report_path = res.get("report")
    k = res.get("k", int)
    repeats = res.get("repeats", int)
    seed = res.get("seed", int)
    jobs = res.get("jobs", int)
    config = _train_config(res)
    grid_cfg = res.section.get("grid") if isinstance(res.section, dict) else None
    if isinstance(grid_cfg, dict):
        grid_cfg = {
            k_: tuple(tuple(p) if isinstance(p, list) else p for p in v)
            if isinstance(v, list) else v
            for k_, v in grid_cfg.items()
        }
        grid = AblationGrid(**grid_cfg)
    else:
        grid = AblationGrid()
    features = {}
    y = None
    for mode in (KeypointMode.WITHOUT_HEAD, KeypointMode.WITH_HEAD):
        x, y = _dataset_from_args(res, mode)
        features[mode.value] = x
    cells = ablation_run(
        features, y, config, grid, store_path, k=k, repeats=repeats, seed=seed, jobs=jobs,
        cell_hook=lambda key, result: print(
            f"{key.condition} fc={key.fc_sizes} F={key.filters} L={key.filter_len}: "
            f"{result.format_row()}"
        ),
    )
    report = format_ablation_report(cells, grid)
    if report_path:
        Path(report_path).write_text(report, encoding="utf-8")
    else:
        print(report)
    _write_manifest(store_path.parent, "ablate", res.resolved)
    return 0


def _cmd_kappa(res: Resolver) -> int:
    labels_path = Path(res.get("labels"))
    if not labels_path.exists():
        raise GmaBenchError(f"label file not found: {labels_path}")
    rows = parse_label_csv(labels_path.read_text(encoding="utf-8"))
    report = agreement_report(rows)
    out = res.get("out")
    text = report.to_text()
    if out:
        Path(out).write_text(text, encoding="utf-8")
        _write_manifest(Path(out).parent, "kappa", res.resolved)
    else:
        print(text, end="")
    csv_out = res.get("csv")
    if csv_out:
        Path(csv_out).write_text(report.to_csv(), encoding="utf-8")
    return 0


def _cmd_study(res: Resolver) -> int:
    journal = res.get("journal")
    if journal is None:
        raise CliError("study needs --journal")
    store = StudyStore(journal)
    try:
        action = res.get("action")
        if action == "plan":
            pool_path = Path(res.get("pool"))
            if not pool_path.exists():
                raise GmaBenchError(f"pool file not found: {pool_path}")
            pool = json.loads(pool_path.read_text(encoding="utf-8"))
            plan = plan_subsets(
                pool,
                count=res.get("count", int),
                size=res.get("size", int),
                seed=res.get("seed", int),
                study_id=res.get("study_id"),
            )
            store.create_study(plan)
            print(plan.study_id)
        elif action == "export":
            study_id = res.get("study_id")
            if not study_id:
                raise CliError("export needs --study-id")
            text, complete = store.export_labels(study_id)
            out = res.get("out")
            if out:
                Path(out).write_text(text, encoding="utf-8")
            else:
                print(text, end="")
            if not complete:
                print("warning: study incomplete, export is partial", file=sys.stderr)
        else:
            raise CliError(f"unknown study action {action!r}")
    finally:
        store.close()
    return 0


def _cmd_serve(res: Resolver) -> int:
    from .service import serve

    journal = res.get("journal")
    if journal is None:
        raise CliError("serve needs --journal")
    serve(
        journal,
        media_root=res.get("media"),
        host=res.get("host"),
        port=res.get("port", int),
    )
    return 0


# --- argument wiring -------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    helps = {
        "config": "TOML or JSON config file; flags override its values",
        "seed": f"global RNG seed (default {DEFAULTS['seed']}; env {SEED_ENV_VAR})",
        "jobs": f"worker cap for parallel stages (default {DEFAULTS['jobs']})",
        "schema": "keypoint schema map JSON (default: built-in BODY-25 map)",
        "mode": f"keypoint subset: with_head or without_head (default {DEFAULTS['mode']})",
        "data": "corpus directory produced by the synth subcommand",
        "gen_per_class": "generate this many synthetic snippets per class instead of --data",
        "filters": f"convolution filter count (default {DEFAULTS['filters']})",
        "filter_len": f"temporal filter length (default {DEFAULTS['filter_len']})",
        "fc_sizes": f"comma-separated FC layer sizes (default {DEFAULTS['fc_sizes']})",
        "dropout": f"dropout rate after conv/FC stages (default {DEFAULTS['dropout']})",
        "learning_rate": f"Adam step size (default {DEFAULTS['learning_rate']})",
        "batch_size": f"training batch size (default {DEFAULTS['batch_size']})",
        "val_fraction": f"held-out validation fraction (default {DEFAULTS['val_fraction']})",
        "patience": f"early-stop patience in epochs (default {DEFAULTS['patience']})",
        "max_epochs": f"epoch budget (default {DEFAULTS['max_epochs']})",
        "k": f"fold count (default {DEFAULTS['k']})",
        "repeats": f"training repeats per fold (default {DEFAULTS['repeats']})",
    }
    for name in names:
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, default=None, help=helps.get(name))


def build_parser() -> _Parser:
    parser = _Parser(prog="gmabench", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic snippet corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--render", action="store_true", default=None,
                   help="also render stick-figure PNG frames")
    p.add_argument("--per-class", dest="per_class", default=None,
                   help=f"snippets per class (default {DEFAULTS['per_class']})")
    p.add_argument("--missing-rate", dest="missing_rate", default=None,
                   help="fraction of keypoints dropped as missing")
    _add_common(p, "config", "seed", "schema")

    p = sub.add_parser("blur", help="blur the face region of a rendered snippet")
    p.add_argument("--keypoints", required=True, help="keypoint document directory")
    p.add_argument("--frames", required=True, help="PNG directory or raw RGB24 stream")
    p.add_argument("--out", required=True, help="output PNG directory or raw stream file")
    p.add_argument("--mask-width", dest="mask_width", default=None,
                   help=f"ellipse width in px (default {DEFAULTS['mask_width']})")
    p.add_argument("--mask-height", dest="mask_height", default=None,
                   help=f"ellipse height in px (default {DEFAULTS['mask_height']})")
    p.add_argument("--kernel", default=None,
                   help=f"box filter kernel size (default {DEFAULTS['kernel']})")
    p.add_argument("--noise-max", dest="noise_max", default=None,
                   help=f"max uniform noise per channel (default {DEFAULTS['noise_max']})")
    p.add_argument("--smoothing", default=None,
                   help=f"EMA coefficient (default {DEFAULTS['smoothing']})")
    p.add_argument("--threshold", default=None,
                   help=f"reliability gate (default {DEFAULTS['threshold']})")
    _add_common(p, "config", "seed", "jobs", "schema")

    p = sub.add_parser("features", help="build a feature matrix from keypoints")
    p.add_argument("--keypoints", required=True)
    p.add_argument("--out", required=True, help="binary feature matrix output path")
    p.add_argument("--csv", default=None, help="optional CSV export path")
    _add_common(p, "config", "mode", "schema")

    p = sub.add_parser("train", help="train one classifier")
    p.add_argument("--out", required=True, help="weight file output path")
    p.add_argument("--history", default=None, help="training history CSV path")
    _add_common(
        p, "config", "seed", "mode", "data", "gen_per_class", "schema",
        "filters", "filter_len", "fc_sizes", "dropout", "learning_rate",
        "batch_size", "val_fraction", "patience", "max_epochs",
    )

    p = sub.add_parser("cv", help="cross-validate one or both conditions")
    p.add_argument("--out", required=True, help="results CSV path")
    _add_common(
        p, "config", "seed", "jobs", "mode", "data", "gen_per_class", "schema",
        "k", "repeats", "filters", "filter_len", "fc_sizes", "dropout",
        "learning_rate", "batch_size", "val_fraction", "patience", "max_epochs",
    )

    p = sub.add_parser("ablate", help="run the ablation grids, resumably")
    p.add_argument("--store", required=True, help="cell result CSV store")
    p.add_argument("--report", default=None, help="formatted report output path")
    _add_common(
        p, "config", "seed", "jobs", "data", "gen_per_class", "schema", "k", "repeats",
        "learning_rate", "batch_size", "val_fraction", "patience", "max_epochs",
    )

    p = sub.add_parser("kappa", help="agreement report from a label CSV")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", default=None, help="report text output path")
    p.add_argument("--csv", default=None, help="report CSV output path")
    _add_common(p, "config")

    p = sub.add_parser("study", help="plan a study or export its labels")
    p.add_argument("action", choices=["plan", "export"])
    p.add_argument("--journal", required=True)
    p.add_argument("--pool", default=None, help="pool JSON for plan")
    p.add_argument("--study-id", dest="study_id", default=None)
    p.add_argument("--count", default=None, help=f"subset count (default {DEFAULTS['count']})")
    p.add_argument("--size", default=None, help=f"subset size (default {DEFAULTS['size']})")
    p.add_argument("--out", default=None, help="export CSV path")
    _add_common(p, "config", "seed")

    p = sub.add_parser("serve", help="run the rating study HTTP service")
    p.add_argument("--journal", required=True)
    p.add_argument("--media", default=None, help="media root directory")
    p.add_argument("--host", default=None)
    p.add_argument("--port", default=None)
    _add_common(p, "config")

    return parser


_COMMANDS = {
    "synth": _cmd_synth,
    "blur": _cmd_blur,
    "features": _cmd_features,
    "train": _cmd_train,
    "cv": _cmd_cv,
    "ablate": _cmd_ablate,
    "kappa": _cmd_kappa,
    "study": _cmd_study,
    "serve": _cmd_serve,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        res = Resolver(args, args.command)
        return _COMMANDS[args.command](res)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (GmaBenchError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # noqa: BLE001 - last-resort exit code mapping
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
