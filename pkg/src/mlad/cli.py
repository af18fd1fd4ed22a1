"""Command line entry point: ``mlad parse | prepare | train | score | eval``.

Every subcommand writes a ``*.manifest.json`` beside its outputs recording
the configuration, seed, and SHA-256 digests of inputs and artifacts.
Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__, dataset, detect, evaluate, logparse, plotting, synthetic, trainer
from .config import TrainConfig, coerce
from .embed import EmbeddingTable, build_table, import_vectors
from .encoder import Model
from .errors import ConfigError, DataError, MladError

log = logging.getLogger("mlad")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# manifests


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, inputs, artifacts, config=None, seed=None) -> Path:
    manifest = {
        "tool": "mlad",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": [{"path": str(p), "sha256": sha256(p)} for p in inputs],
        "artifacts": [{"path": Path(p).name, "sha256": sha256(p)} for p in artifacts],
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# --------------------------------------------------------------------------
# shared helpers


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file with TrainConfig fields")
    g = p.add_argument_group("config overrides")
    for f in fields(TrainConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar=f.type.upper())


def _config(args) -> TrainConfig:
    values = TrainConfig.load(args.config).to_dict() if args.config else {}
    for f in fields(TrainConfig):
        raw = getattr(args, "cfg_" + f.name, None)
        if raw is not None:
            values[f.name] = coerce(f.name, raw)
    return TrainConfig.from_dict(values)


def _table(data_dir: Path, d: int, vectors: str | None = None) -> tuple[EmbeddingTable, list[Path]]:
    store_path = data_dir / "templates.tsv"
    store = logparse.TemplateStore.load(_need(store_path))
    if vectors:
        return import_vectors(vectors, store), [store_path, Path(vectors)]
    return build_table(store, d), [store_path]


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input not found: {path}")
    return path


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# parse


def _parse_config(args) -> logparse.ParseConfig:
    return logparse.ParseConfig(depth=args.depth, similarity_threshold=args.threshold,
                                max_children=args.max_children, header_regex=args.header_regex)


def _do_parse(lines, out: Path, pcfg, seed_store=None) -> logparse.ParseResult:
    result = logparse.parse_corpus(lines, pcfg, seed=seed_store)
    result.store.save(out / "templates.tsv")
    (out / "keys.tsv").write_text(result.dumps_keys(), encoding="utf-8")
    return result


def cmd_parse(args) -> int:
    src = _need(args.log)
    out = _out_dir(args.out)
    seed = logparse.TemplateStore.load(args.seed_templates) if args.seed_templates else None
    result = _do_parse(logparse.read_lines(src), out, _parse_config(args), seed)
    inputs = [src] + ([Path(args.seed_templates)] if args.seed_templates else [])
    write_manifest(out / "parse.manifest.json", "parse", inputs, [out / "templates.tsv", out / "keys.tsv"],
                   {"depth": args.depth, "threshold": args.threshold,
                    "max_children": args.max_children, "header_regex": args.header_regex})
    print(f"{len(result.keys)} lines -> {len(result.store)} templates in {out}")
    return 0


# --------------------------------------------------------------------------
# prepare


def _write_split(out: Path, windows, seed: int) -> tuple[list, list]:
    train, test = dataset.split(windows, seed)
    dataset.save_windows(windows, out / "all.windows")
    dataset.save_windows(train, out / "train.windows")
    dataset.save_windows(test, out / "test.windows")
    return train, test


def _prepare_parsed(parsed: Path, out: Path, args) -> tuple[list, list[Path]]:
    keys_path = _need(parsed / "keys.tsv")
    line_numbers, keys = logparse.load_keys(keys_path)
    inputs = [keys_path]
    spec = dataset.SplitSpec(seed=args.seed, mode="session" if args.session_id_regex else "sliding",
                             window_size=args.window)
    if spec.mode == "sliding":
        if not args.labels:
            raise DataError("sliding mode needs --labels (one 0/1 label per raw line)")
        labels = dataset.load_line_labels(_need(args.labels))
        inputs.append(Path(args.labels))
        if line_numbers and line_numbers[-1] >= len(labels):
            raise DataError(f"labels/keys misaligned: {len(labels)} labels but keys reference "
                            f"line {line_numbers[-1] + 1} ({len(keys)} parsed lines)")
        records = dataset.make_records(keys, [labels[i] for i in line_numbers], indices=line_numbers)
    else:
        if not args.raw:
            raise DataError("session mode needs --raw (the original log) to read session ids")
        raw = logparse.read_lines(_need(args.raw))
        inputs.append(Path(args.raw))
        texts = [raw[i] for i in line_numbers]
        records = dataset.make_records(keys, texts=texts, indices=line_numbers)
        records, _ = dataset.sessionize(records, args.session_id_regex)
        if args.session_labels:
            inputs.append(_need(args.session_labels))
            records = dataset.apply_session_labels(records, dataset.load_session_labels(args.session_labels))
        elif args.labels:
            labels = dataset.load_line_labels(_need(args.labels))
            inputs.append(Path(args.labels))
            if len(labels) < len(raw):
                raise DataError(f"labels/log misaligned: {len(labels)} labels for {len(raw)} raw lines")
            records = [dataset.LogRecord(r.index, r.template_key, labels[r.index], r.session_id, r.text)
                       for r in records]
        else:
            raise DataError("session mode needs --session-labels or --labels")
    windows = dataset.windowize(records, spec, args.origin or parsed.name)
    if parsed != out:
        (out / "templates.tsv").write_bytes((parsed / "templates.tsv").read_bytes())
    return windows, inputs


def cmd_prepare(args) -> int:
    out = _out_dir(args.out)
    if args.synthetic:
        spec_a, spec_b = synthetic.shared_vocabulary_pair()
        spec = spec_b if args.system == "B" else (spec_a if args.system == "A" else synthetic.SystemSpec())
        system = synthetic.make_system(spec)
        lines, labels = synthetic.generate(system, args.n_windows, args.window, args.anomaly_rate,
                                           seed=args.seed)
        (out / "synthetic.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
        (out / "synthetic.labels").write_text("".join(f"{x}\n" for x in labels), encoding="utf-8")
        _do_parse(lines, out, _parse_config(args))
        args.labels = str(out / "synthetic.labels")
        args.origin = args.origin or args.system or "synthetic"
        windows, inputs = _prepare_parsed(out, out, args)
    elif args.fuse:
        sets = {}
        stores = {}
        inputs = []
        for d in map(Path, args.fuse):
            sets[d.name] = dataset.load_windows(_need(d / "all.windows"))
            stores[d.name] = logparse.TemplateStore.load(_need(d / "templates.tsv"))
            inputs += [d / "all.windows", d / "templates.tsv"]
        # window origins must match the directory names used as namespaces
        sets = {name: [dataset.Window(w.keys, w.label, name, w.session_id) for w in ws]
                for name, ws in sets.items()}
        windows, keymap = dataset.fuse(sets, args.seed)
        fused = logparse.TemplateStore(
            logparse.Template(new, list(stores[o][k].tokens), stores[o][k].support_count)
            for (o, k), new in keymap.items())
        fused.save(out / "templates.tsv")
        (out / "keymap.tsv").write_text("".join(f"{o}\t{k}\t{n}\n" for (o, k), n in keymap.items()),
                                        encoding="utf-8")
    elif args.parsed:
        windows, inputs = _prepare_parsed(Path(args.parsed), out, args)
    else:
        raise ConfigError("prepare needs one of --parsed, --synthetic or --fuse")
    train, test = _write_split(out, windows, args.seed)
    artifacts = [out / n for n in ("templates.tsv", "all.windows", "train.windows", "test.windows")]
    write_manifest(out / "prepare.manifest.json", "prepare", inputs, artifacts,
                   {"window": args.window, "session_id_regex": args.session_id_regex,
                    "fuse": [Path(p).name for p in args.fuse or []], "synthetic": bool(args.synthetic)},
                   args.seed)
    counts = dataset.origin_counts(windows)
    print(f"{len(windows)} windows {counts} -> train {len(train)}, test {len(test)} in {out}")
    return 0


# --------------------------------------------------------------------------
# train / score


def cmd_train(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    windows_path = _need(Path(args.windows) if args.windows else data / "train.windows")
    windows = dataset.load_windows(windows_path)
    table, inputs = _table(data, cfg.d, args.vectors)
    model, report = trainer.train(windows, cfg, table,
                                  progress=lambda e: print(f"epoch {e.epoch} loss {e.loss:.6f}", file=sys.stderr))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    report.checkpoint = out.name
    Path(str(out) + ".log").write_text(report.dumps(), encoding="utf-8")
    write_manifest(f"{out}.manifest.json", "train", [windows_path] + inputs, [out], cfg.to_dict(), cfg.seed)
    print(f"checkpoint {out} (final loss {report.epochs[-1].loss:.6f})")
    return 0


def cmd_score(args) -> int:
    model = Model.load(args.model)
    data = Path(args.data)
    windows_path = _need(Path(args.windows) if args.windows else data / "test.windows")
    windows = dataset.load_windows(windows_path)
    table, inputs = _table(data, model.cfg.d, args.vectors)
    scored = detect.score(windows, model, table, keep_h=args.dump_h)
    fld = detect.score_field(model)
    if args.policy == "contamination":
        rho = args.rho
        if rho is None:
            raise ConfigError("contamination policy needs --rho")
        thr, decided = detect.threshold(detect.ThresholdPolicy("contamination", rho=rho, field=fld), scored)
    else:
        train_path = _need(data / "train.windows")
        train_scores = [s.score(fld) for s in detect.score(dataset.load_windows(train_path), model, table)]
        inputs.append(train_path)
        thr, decided = detect.threshold(detect.ThresholdPolicy("train_quantile", q=args.q, field=fld),
                                        scored, train_scores)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(detect.dumps_scores(decided, with_h=args.dump_h), encoding="utf-8")
    write_manifest(f"{out}.manifest.json", "score", [Path(args.model), windows_path] + inputs, [out],
                   {"policy": args.policy, "rho": args.rho, "q": args.q, "field": fld}, model.cfg.seed)
    m = evaluate.metrics([s.verdict for s in decided], [s.window.label for s in decided])
    print(f"threshold {thr:.6g}: flagged {sum(s.verdict for s in decided)}/{len(decided)}; "
          f"P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f}")
    return 0


# --------------------------------------------------------------------------
# eval


def _corpora(specs, d: int, embedding: str) -> tuple[dict, list[Path]]:
    data, inputs = {}, []
    for item in specs:
        name, _, path = item.rpartition("=")
        path = Path(path)
        name = name or path.name
        win_path = _need(path / "all.windows")
        windows = dataset.load_windows(win_path)
        if len({w.origin for w in windows}) <= 1:
            # single-system set: tag with the name used on the command line
            windows = [dataset.Window(w.keys, w.label, name, w.session_id) for w in windows]
        vectors = path / "vectors.tsv" if embedding == "imported" else None
        if embedding == "imported" and not vectors.exists():
            raise DataError(f"imported embeddings requested but {vectors} is missing")
        table, used = _table(path, d, str(vectors) if vectors else None)
        data[name] = evaluate.Corpus(name, windows, table)
        inputs += [win_path] + used
    return data, inputs


def cmd_eval(args) -> int:
    cfg = _config(args)
    data, inputs = _corpora(args.data, cfg.d, args.embedding)
    names = list(data)
    kind = args.experiment
    ablations = ("none",)
    grid = evaluate.ALPHA_GRID
    if args.ablate:
        kind = "ablation"
        ablations = ("none",) + tuple(a for a in args.ablate if a != "none")
    if args.alpha_sweep:
        kind = "alpha_sweep"
        try:
            grid = tuple(float(a) for a in args.alpha_sweep.split(","))
        except ValueError:
            raise ConfigError(f"bad --alpha-sweep list {args.alpha_sweep!r}") from None
    train_sets = args.train or (names if kind == "fused" else names[:1])
    test_sets = args.test or []
    if kind == "transfer" and not test_sets:
        test_sets = [n for n in names if n not in train_sets]
    spec = evaluate.ExperimentSpec(kind, train_sets, test_sets, ablations, grid)
    report = evaluate.run_experiment(spec, data, cfg, policy=args.policy, q=args.q,
                                     keep_h=args.dump_h)
    out = _out_dir(args.out)
    (out / "report.csv").write_text(report.dumps_csv(), encoding="utf-8")
    (out / "summary.txt").write_text(report.summary(), encoding="utf-8")
    artifacts = [out / "report.csv", out / "summary.txt"]
    for run in report.runs:
        p = out / f"scores_{plotting._slug(run.label)}.csv"
        p.write_text(detect.dumps_scores(run.scored, with_h=args.dump_h), encoding="utf-8")
        artifacts.append(p)
    if not args.no_figures:
        artifacts += plotting.render_report(report, out, kind)
    write_manifest(out / "eval.manifest.json", "eval", inputs, artifacts,
                   {"train": cfg.to_dict(), "experiment": kind, "ablations": list(ablations),
                    "alpha_grid": list(grid), "policy": args.policy, "q": args.q,
                    "embedding": args.embedding}, cfg.seed)
    sys.stdout.write(report.summary())
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mlad", description="Parse logs, train an anomaly model, score and evaluate")
    ap.add_argument("--version", action="version", version=f"mlad {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def parse_flags(p):
        p.add_argument("--depth", type=int, default=4)
        p.add_argument("--threshold", type=float, default=0.4, help="similarity threshold")
        p.add_argument("--max-children", type=int, default=100)
        p.add_argument("--header-regex", help="prefix to strip; a (?P<content>...) group selects the message")

    p = sub.add_parser("parse", help="mine templates from a raw log")
    p.add_argument("log")
    p.add_argument("--out", required=True)
    p.add_argument("--seed-templates", help="existing templates.tsv to start from")
    parse_flags(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("prepare", help="window, label and split parsed data")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--parsed", help="directory written by 'mlad parse'")
    src.add_argument("--synthetic", action="store_true", help="generate a labelled synthetic corpus")
    src.add_argument("--fuse", nargs="+", metavar="DIR", help="prepared directories to fuse")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="one 0/1 label per raw log line")
    p.add_argument("--raw", help="raw log (session mode)")
    p.add_argument("--session-id-regex", help="e.g. '(blk_-?\\d+)' for HDFS")
    p.add_argument("--session-labels", help="CSV of session_id,label")
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--origin")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--system", choices=["A", "B"], help="synthetic system from the shared-vocabulary pair")
    p.add_argument("--n-windows", type=int, default=10000)
    p.add_argument("--anomaly-rate", type=float, default=0.05)
    parse_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on normal windows")
    p.add_argument("--data", required=True, help="prepared directory")
    p.add_argument("--windows", help="override <data>/train.windows")
    p.add_argument("--vectors", help="imported template vectors (TSV)")
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score windows and apply a threshold")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--windows", help="override <data>/test.windows")
    p.add_argument("--vectors")
    p.add_argument("--policy", choices=["train_quantile", "contamination"], default="train_quantile")
    p.add_argument("--q", type=float, default=0.99)
    p.add_argument("--rho", type=float)
    p.add_argument("--dump-h", action="store_true", help="append the window codes to the CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="run an experiment protocol and write a report")
    p.add_argument("--data", nargs="+", required=True, metavar="[NAME=]DIR")
    p.add_argument("--experiment", choices=evaluate.KINDS, default="single")
    p.add_argument("--train", nargs="+")
    p.add_argument("--test", nargs="+")
    p.add_argument("--ablate", nargs="+", choices=evaluate.ABLATIONS)
    p.add_argument("--alpha-sweep", metavar="A1,A2,...")
    p.add_argument("--policy", choices=["train_quantile", "contamination"], default="contamination")
    p.add_argument("--q", type=float, default=0.99)
    p.add_argument("--embedding", choices=["hashed", "imported"], default="hashed")
    p.add_argument("--dump-h", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MladError as exc:
        print(f"mlad {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"mlad {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
