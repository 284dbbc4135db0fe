"""Command-line entry point: ingest, pretrain, train, eval and report.

Every command accepts ``--seed``, ``--config`` (flat ``key=value`` file whose
keys are the long option names with dashes turned into underscores) and
``--out``. Explicit flags override config-file values, which override the
built-in defaults. The effective settings are echoed to ``<out>/config.txt``.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from llmpia import corpus as corpus_mod
from llmpia import episodes, llmcrl, pia, plotting, trainkit
from llmpia.encoder import RESERVED, PrecomputedStore, ToyEncoder
from llmpia.errors import InsufficientClasses, LlmpiaError
from llmpia.seeding import derive_rng, derive_seed
from llmpia.similarity import ALL_KINDS, SimilarityKind

RUN_FILE = "run.json"
REPORT_COLUMNS = ("model", "seen_fraction", "k_shot", "similarity", "n_way", "seed",
                  "accuracy", "weighted_precision", "weighted_recall", "weighted_f1",
                  "bias_category", "bias_error_type", "source")


class UsageError(Exception):
    """Bad invocation detected after argparse (e.g. unknown config key)."""


# -- option tables -----------------------------------------------------------------
# name -> (type, default). The same names are valid config-file keys.

_COMMON = {"seed": (int, 0), "out": (str, ".")}


_OPTIONS = {
    "ingest": {
        "format": (str, "atis"),
        "min_count": (int, 7),
    },
    "pretrain": {
        "corpus": (str, None),
        "encoder": (str, None),
        "stopwords": (str, None),
        "retrain_on": (str, "train"),
        "seen": (float, 0.75),
        "val_fraction": (float, 0.5),
        "d_h": (int, 64),
        "epochs": (int, 50),
        "max_steps": (int, None),
        "batch_size": (int, 64),
        "learning_rate": (float, 1e-5),
        "tau": (float, 0.05),
        "l_seq": (int, 32),
        "select_rate": (float, 0.25),
        "mask_frac": (float, 0.8),
        "random_frac": (float, 0.1),
        "keep_frac": (float, 0.1),
    },
    "train": {
        "corpus": (str, None),
        "encoder": (str, None),
        "embeddings": (str, None),
        "n_way": (int, 4),
        "k_shot": (int, 5),
        "q_query": (int, 5),
        "seen": (float, 0.75),
        "val_fraction": (float, 0.5),
        "l_seq": (int, 32),
        "d_h": (int, 64),
        "heads": (int, 4),
        "dropout_rate": (float, 0.1),
        "t": (float, 0.1),
        "tau": (float, 0.05),
        "hidden_size": (int, 300),
        "learning_rate": (float, 1e-5),
        "max_episodes": (int, 2000),
        "eval_every": (int, 100),
        "patience": (int, 10),
    },
    "eval": {
        "run": (str, None),
        "similarity": (str, "cosine"),
        "k_shot": (int, None),
    },
    "report": {},
}


_POSITIONAL = {"ingest": "input", "report": "run_dir"}
_CHOICES = {"ingest": {"format": ("atis", "tsv")}, "pretrain": {"retrain_on": ("train", "all")}}


def _add_options(parser, table):
    for name, (typ, _) in table.items():
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=name, type=typ, default=None)
        if name == "seen":
            parser.add_argument("--seen-fraction", dest=name, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llmpia", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for command, table in _OPTIONS.items():
        p = sub.add_parser(command)
        if command in _POSITIONAL:
            p.add_argument(_POSITIONAL[command])
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=None)
        _add_options(p, table)
        if command in _CHOICES:
            p.set_defaults(_choices=_CHOICES[command])
    return parser


def _read_config_file(path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def effective_settings(args) -> dict:
    """Defaults <- config file <- explicit flags, with types applied."""
    table = {**_COMMON, **_OPTIONS[args.command]}
    settings = {name: default for name, (_, default) in table.items()}
    if args.config:
        for key, raw in _read_config_file(args.config).items():
            if key not in table:
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            typ = table[key][0]
            try:
                settings[key] = None if raw.lower() == "none" else typ(raw)
            except ValueError:
                raise UsageError(f"config key {key!r}: cannot parse {raw!r}") from None
    for name in table:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    for name, allowed in getattr(args, "_choices", {}).items():
        if settings[name] not in allowed:
            raise UsageError(f"--{name} must be one of {', '.join(allowed)}")
    return settings


def _echo_config(out: Path, command: str, settings: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"command={command}"] + [f"{k}={settings[k]}" for k in sorted(settings)]
    (out / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require(settings, *names):
    for name in names:
        if settings.get(name) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required")


# -- commands ----------------------------------------------------------------------


def cmd_ingest(args, s) -> int:
    out = Path(s["out"])
    parsed = corpus_mod.read_corpus(args.input, s["format"])
    kept = corpus_mod.filter_small_classes(parsed, s["min_count"])
    _echo_config(out, "ingest", {**s, "input": args.input})
    corpus_mod.write_tsv(kept, out / "corpus.tsv")
    hist = corpus_mod.class_histogram(kept)
    with open(out / "class_histogram.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "count"])
        writer.writerows(hist)
    summary = {
        "n_utterances": len(kept.utterances),
        "n_classes": len(kept.label_vocab),
        "dropped_classes": sorted(set(parsed.label_vocab) - set(kept.label_vocab)),
        "classes": dict(hist),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, ensure_ascii=False) + "\n",
                                      encoding="utf-8")
    plotting.class_histogram(dict(hist), out / "class_histogram.png")
    print(f"classes={summary['n_classes']} utterances={summary['n_utterances']} "
          f"dropped={len(summary['dropped_classes'])}")
    return 0


def _corpus_vocab(corpus) -> list[str]:
    tokens = sorted({t for u in corpus.utterances for t in u.tokens} - set(RESERVED))
    return list(RESERVED) + tokens


def cmd_pretrain(args, s) -> int:
    _require(s, "corpus")
    out = Path(s["out"])
    data = corpus_mod.read_corpus(s["corpus"], "tsv")
    retrain_corpus = data
    if s["retrain_on"] == "train":
        # same split that `train` derives from identical seed / seen / val-fraction flags
        split = corpus_mod.make_class_split(data, s["seen"], s["val_fraction"], seed=s["seed"])
        retrain_corpus = data.restrict(split.c_train)
    if s["encoder"]:
        encoder = ToyEncoder.load(s["encoder"])
    else:
        encoder = ToyEncoder.initialize(_corpus_vocab(data), d_h=s["d_h"], max_len=s["l_seq"],
                                        rng=derive_rng(s["seed"], "encoder-init"))
    policy = llmcrl.MaskingPolicy(s["select_rate"], s["mask_frac"], s["random_frac"],
                                  s["keep_frac"], seed=s["seed"])
    config = llmcrl.RetrainConfig(epochs=s["epochs"], batch_size=s["batch_size"],
                                  learning_rate=s["learning_rate"], tau=s["tau"],
                                  l_seq=s["l_seq"], max_steps=s["max_steps"], seed=s["seed"])
    stopwords = llmcrl.load_stopwords(s["stopwords"])
    _echo_config(out, "pretrain", s)
    trained, history = llmcrl.retrain(encoder, retrain_corpus, policy, config, stopwords)
    trained.save(out / "encoder.ckpt")
    llmcrl.write_loss_csv(history, out / "pretrain_loss.csv")
    if history:
        plotting.loss_curves([h.step for h in history],
                             {"mlm": [h.mlm for h in history], "scl": [h.scl for h in history],
                              "total": [h.total for h in history]},
                             out / "pretrain_loss.png", title="re-training loss")
        print(f"steps={len(history)} first_total={history[0].total:.6f} "
              f"last_total={history[-1].total:.6f}")
    else:
        print("steps=0 (encoder unchanged)")
    return 0


def _load_backend(s, corpus):
    """(backend, model name) from --embeddings, --encoder or a fresh seeded toy encoder."""
    if s.get("embeddings"):
        return PrecomputedStore.load(s["embeddings"]), "precomputed"
    if s.get("encoder"):
        return ToyEncoder.load(s["encoder"]), "toy"
    encoder = ToyEncoder.initialize(_corpus_vocab(corpus), d_h=s["d_h"], max_len=s["l_seq"],
                                    rng=derive_rng(s["seed"], "encoder-init"))
    return encoder, "toy-init"


def _pipeline(s, corpus):
    backend, model = _load_backend(s, corpus)
    table = trainkit.EmbeddingTable.encode(backend, corpus, s["l_seq"])
    cfg = pia.PiaConfig(d_h=table.d_h, heads=s["heads"], dropout_rate=s["dropout_rate"],
                        t=s["t"], tau=s["tau"], hidden_size=s["hidden_size"])
    return trainkit.Pipeline(corpus, table, cfg, model=model)


def cmd_train(args, s) -> int:
    _require(s, "corpus")
    out = Path(s["out"])
    data = corpus_mod.read_corpus(s["corpus"], "tsv")
    split = corpus_mod.make_class_split(data, s["seen"], s["val_fraction"], seed=s["seed"])
    spec = episodes.EpisodeSpec(s["n_way"], s["k_shot"], s["q_query"], seed=s["seed"])
    if len(split.c_train) < spec.n_way:
        raise InsufficientClasses(
            f"{len(split.c_train)} training classes available, {spec.n_way} requested")
    pipeline = _pipeline(s, data)
    config = trainkit.TrainConfig(learning_rate=s["learning_rate"],
                                  max_episodes=s["max_episodes"], eval_every=s["eval_every"],
                                  patience=s["patience"], seed=s["seed"])
    _echo_config(out, "train", s)
    params, history = trainkit.train(pipeline, split, spec, config)
    pia.save_params(params, pipeline.config, out / "pia.ckpt")
    trainkit.write_history_csv(history, out / "history.csv")
    (out / "split.json").write_text(json.dumps(split.to_dict(), indent=2) + "\n",
                                    encoding="utf-8")
    run = {k: s[k] for k in _OPTIONS["train"]}
    for key in ("corpus", "encoder", "embeddings"):
        if run[key]:
            run[key] = str(Path(run[key]).resolve())
    run.update(seed=s["seed"], model=pipeline.model, d_h=pipeline.table.d_h)
    (out / RUN_FILE).write_text(json.dumps(run, indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")
    if history:
        plotting.loss_curves([h.episode for h in history],
                             {"ce": [h.ce for h in history], "ucl1": [h.ucl1 for h in history],
                              "ucl2": [h.ucl2 for h in history],
                              "val accuracy": [h.val_accuracy for h in history]},
                             out / "history.png", title="episodic training", xlabel="episode")
        last = history[-1]
        print(f"evaluations={len(history)} last_episode={last.episode} "
              f"val_accuracy={last.val_accuracy:.4f} val_wf1={last.val_wf1:.4f}")
    else:
        print("evaluations=0 (initial parameters saved)")
    return 0


def _report_row(report: trainkit.MetricsReport) -> list:
    d = report.to_dict()
    return [d["similarity"], d["accuracy"], d["weighted_precision"], d["weighted_recall"],
            d["weighted_f1"], d["bias_category"], d["bias_error_type"]]


def cmd_eval(args, s) -> int:
    _require(s, "run")
    run_dir = Path(s["run"])
    run = json.loads((run_dir / RUN_FILE).read_text(encoding="utf-8"))
    k_shot = s["k_shot"] if s["k_shot"] is not None else run["k_shot"]
    data = corpus_mod.read_corpus(run["corpus"], "tsv")
    split = corpus_mod.ClassSplit.from_dict(
        json.loads((run_dir / "split.json").read_text(encoding="utf-8")))
    params, _ = pia.load_params(run_dir / "pia.ckpt")
    pipeline = _pipeline(run, data)
    task = episodes.test_protocol(data, split.c_test, k_shot,
                                  derive_seed(run["seed"], "test-task"))
    meta = dict(n_way=len(split.c_test), k_shot=k_shot, seen_fraction=run["seen"],
                seed=run["seed"])
    out = Path(s["out"])
    _echo_config(out, "eval", s)
    if s["similarity"].lower() == "all":
        reports = [trainkit.evaluate(pipeline, params, task, kind, **meta) for kind in ALL_KINDS]
        with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["similarity", "accuracy", "weighted_precision", "weighted_recall",
                             "weighted_f1", "bias_category", "bias_error_type"])
            for r in reports:
                writer.writerow(_report_row(r))
        with open(out / "sweep.json", "w", encoding="utf-8") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=2)
            fh.write("\n")
        plotting.metric_bars([r.similarity for r in reports], [r.accuracy for r in reports],
                             out / "sweep.png")
        for r in reports:
            print(f"{r.similarity}: accuracy={r.accuracy:.4f} wf1={r.weighted_f1:.4f}")
    else:
        kind = SimilarityKind.parse(s["similarity"])
        report = trainkit.evaluate(pipeline, params, task, kind, **meta)
        (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
        print(f"{kind.value}: accuracy={report.accuracy:.4f} wf1={report.weighted_f1:.4f} "
              f"bias={report.bias_category}/{report.bias_error_type}")
    return 0


def _collect_reports(root: Path) -> list[dict]:
    rows = []
    for path in sorted(root.rglob("metrics.json")) + sorted(root.rglob("sweep.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        for entry in data if isinstance(data, list) else [data]:
            rows.append({**entry, "source": str(path.parent.relative_to(root)) or "."})
    return rows


def cmd_report(args, s) -> int:
    root = Path(args.run_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"run directory {root} does not exist")
    rows = _collect_reports(root)
    if not rows:
        raise LlmpiaError(f"no metrics.json or sweep.json found under {root}")
    rows.sort(key=lambda r: (str(r["model"]), float(r["seen_fraction"]), int(r["k_shot"]),
                             str(r["similarity"]), r["source"]))
    out = Path(s["out"])
    _echo_config(out, "report", {**s, "run_dir": str(root)})
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow([r[c] for c in REPORT_COLUMNS])
    md = ["| " + " | ".join(REPORT_COLUMNS) + " |",
          "|" + "---|" * len(REPORT_COLUMNS)]
    for r in rows:
        cells = [f"{r[c]:.4f}" if isinstance(r[c], float) and c not in ("seen_fraction",)
                 else str(r[c]) for c in REPORT_COLUMNS]
        md.append("| " + " | ".join(cells) + " |")
    (out / "report.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    groups: dict[str, tuple[list, list]] = {}
    for r in rows:
        key = f"{r['model']} {r['similarity']} k={r['k_shot']}"
        xs, ys = groups.setdefault(key, ([], []))
        xs.append(float(r["seen_fraction"]))
        ys.append(float(r["accuracy"]))
    plotting.grouped_lines(groups, out / "report.png", xlabel="seen fraction",
                           ylabel="accuracy", title="accuracy by configuration")
    print(f"rows={len(rows)} written to {out / 'report.csv'}")
    return 0


_COMMANDS = {"ingest": cmd_ingest, "pretrain": cmd_pretrain, "train": cmd_train,
             "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = effective_settings(args)
        return _COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (LlmpiaError, ValueError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
