"""Command-line entry point: ``nomabeam <command> [options]``.

Every option can also come from a JSON file passed with ``--config``; keys
are option names without the leading dashes (``{"nt": [2, 3], "seed": 4}``).
Explicit command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import dataset as ds
from .ber import ModulationSpec
from .channel import sample_scenario
from .harness import (EVAL_FIELDS, TECHNIQUES, TIMING_FIELDS, ECDF_FIELDS, VALIDATION_FIELDS,
                      EvalConfig, emit_ecdf, read_eval_csv, run_eval, run_timing,
                      validation_suite, write_csv)
from .learner import BeamformingNet, load_model, save_model
from .linksim import graymap_table
from .optimizer import CoConfig

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION = 0, 1, 2

DEFAULTS = {
    "gen": {"nt": [2, 3, 4, 5], "count": 100, "seed": 0, "out": "dataset.jsonl"},
    "label": {"starts": 20, "seed": 0, "out": None},
    "train": {"epochs": 200, "seed": 0, "model": "model.json"},
    "eval": {"model": None, "symbols": 10**6, "seed": 0, "starts": 20, "out": "eval.csv",
             "techniques": list(TECHNIQUES)},
    "ecdf": {"out": "ecdf.csv"},
    "timing": {"nt": [2, 3, 4, 5], "count": 100, "seed": 0, "starts": 20, "model": None,
               "out": "timing.csv"},
    "validate": {"nt": [2], "count": 50, "symbols": 10**6, "seed": 0, "out": None},
    "graymap": {"order": 4, "out": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for validation failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _nt_list(text):
    try:
        values = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid antenna list {text!r}") from None
    if not values or min(values) < 2:
        raise argparse.ArgumentTypeError("antenna counts must be integers >= 2")
    return values


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seeds must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nomabeam", description="Two-user NOMA beamforming toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON file with option values")
        return sp

    g = add("gen", "generate unlabeled scenarios (JSONL)")
    g.add_argument("--nt", type=_nt_list, help="comma-separated antenna counts")
    g.add_argument("--count", type=_positive, help="records per antenna count")
    g.add_argument("--seed", type=_seed)
    g.add_argument("--out")

    lb = add("label", "attach CO labels to a dataset (resumable)")
    lb.add_argument("dataset")
    lb.add_argument("--starts", type=_positive)
    lb.add_argument("--seed", type=_seed)
    lb.add_argument("--out", help="output JSONL (default: label in place)")

    t = add("train", "train the network on labeled datasets")
    t.add_argument("datasets", nargs="+")
    t.add_argument("--epochs", type=_positive)
    t.add_argument("--seed", type=_seed)
    t.add_argument("--model", help="output model file")

    e = add("eval", "evaluate techniques on a dataset (CSV)")
    e.add_argument("dataset")
    e.add_argument("--model")
    e.add_argument("--symbols", type=_positive, help="Monte Carlo symbols per scenario")
    e.add_argument("--starts", type=_positive)
    e.add_argument("--seed", type=_seed)
    e.add_argument("--techniques", type=lambda s: [x for x in s.split(",") if x])
    e.add_argument("--out")

    c = add("ecdf", "empirical CDFs from an evaluation CSV")
    c.add_argument("eval_csv")
    c.add_argument("--out")

    tm = add("timing", "per-instance wall time of NN and CO")
    tm.add_argument("--nt", type=_nt_list)
    tm.add_argument("--count", type=_positive, help="instances per antenna count")
    tm.add_argument("--starts", type=_positive)
    tm.add_argument("--seed", type=_seed)
    tm.add_argument("--model")
    tm.add_argument("--out")

    v = add("validate", "closed-form BER vs link simulation")
    v.add_argument("--nt", type=_nt_list)
    v.add_argument("--count", type=_positive, help="number of random cases")
    v.add_argument("--symbols", type=_positive)
    v.add_argument("--seed", type=_seed)
    v.add_argument("--out")

    gm = add("graymap", "print the Gray bit-to-symbol table")
    gm.add_argument("--order", type=_positive, help="QAM order (4, 16, 64)")
    gm.add_argument("--out")
    return p


def resolve_options(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config, then explicit flags."""
    opts = dict(DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                conf = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(conf, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in conf.items():
            key = key.replace("-", "_")
            if key not in opts:
                raise UsageError(f"option {key!r} does not apply to '{args.command}'")
            opts[key] = value
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        opts[key] = value
    if isinstance(opts.get("nt"), (int, str)):
        opts["nt"] = _nt_list(opts["nt"])
    return opts


def _emit(text: str, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen(o):
    records = list(ds.generate_dataset(o["nt"], int(o["count"]), seed=int(o["seed"])))
    ds.write_jsonl(records, o["out"])
    print(f"wrote {len(records)} records to {o['out']}", file=sys.stderr)
    return EXIT_OK


def cmd_label(o):
    dst = o["out"] or o["dataset"]
    cfg = CoConfig(n_starts=int(o["starts"]), seed=int(o["seed"]))
    if dst == o["dataset"]:
        records = ds.label_dataset(ds.read_jsonl(o["dataset"]), ModulationSpec(), cfg)
        ds.write_jsonl(records, dst)
    else:
        records = ds.label_file(o["dataset"], dst, ModulationSpec(), cfg)
    failed = sum(r.error is not None for r in records)
    print(f"labeled {len(records) - failed} records into {dst}"
          + (f" ({failed} failed)" if failed else ""), file=sys.stderr)
    return EXIT_OK


def cmd_train(o):
    records = [r for path in o["datasets"] for r in ds.read_jsonl(path)]
    labeled = [r for r in records if r.labeled]
    if not labeled:
        raise UsageError("no labeled records to train on")
    net = BeamformingNet(max_epochs=int(o["epochs"]), seed=int(o["seed"]))
    net.fit(ds.feature_matrix(labeled), ds.label_matrix(labeled))
    save_model(net.model_, o["model"])
    h = net.history_
    print(f"trained on {len(labeled)} records, {len(h.train_loss)} epochs, "
          f"best epoch {h.best_epoch}; model saved to {o['model']}", file=sys.stderr)
    return EXIT_OK


def _load_model_opt(o, needed):
    if not needed:
        return None
    if not o.get("model"):
        raise UsageError("--model is required for the NN technique")
    return load_model(o["model"])


def cmd_eval(o):
    techniques = tuple(o["techniques"])
    model = _load_model_opt(o, "NN" in techniques)
    cfg = EvalConfig(techniques=techniques, mc_symbols=int(o["symbols"]), seed=int(o["seed"]),
                     co=CoConfig(n_starts=int(o["starts"])))
    rows = list(run_eval(ds.read_jsonl(o["dataset"]), model, cfg))
    _emit(write_csv(rows, EVAL_FIELDS), o["out"])
    return EXIT_OK


def cmd_ecdf(o):
    rows = read_eval_csv(o["eval_csv"])
    _emit(write_csv(emit_ecdf(rows), ECDF_FIELDS), o["out"])
    return EXIT_OK


def cmd_timing(o):
    model = _load_model_opt(o, True)
    rng = np.random.default_rng(int(o["seed"]))
    scen = {nt: [sample_scenario(nt, seed=int(rng.integers(2**62))) for _ in range(int(o["count"]))]
            for nt in o["nt"]}
    cfg = EvalConfig(co=CoConfig(n_starts=int(o["starts"])))
    rows = run_timing(scen, model, cfg)
    _emit(write_csv(rows, TIMING_FIELDS), o["out"])
    return EXIT_OK


def cmd_validate(o):
    rows = []
    for nt in o["nt"]:
        rows += validation_suite(count=int(o["count"]), n_symbols=int(o["symbols"]),
                                 seed=int(o["seed"]), nt=nt)
    _emit(write_csv(rows, VALIDATION_FIELDS), o["out"])
    failed = [r for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} cases within {rows[0].sigmas:g} standard errors",
          file=sys.stderr)
    return EXIT_VALIDATION if failed else EXIT_OK


def cmd_graymap(o):
    rows = graymap_table(int(o["order"]))
    _emit(write_csv(rows, ("bits", "in_phase", "quadrature", "re", "im")), o["out"])
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "label": cmd_label, "train": cmd_train, "eval": cmd_eval,
            "ecdf": cmd_ecdf, "timing": cmd_timing, "validate": cmd_validate,
            "graymap": cmd_graymap}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except (UsageError, argparse.ArgumentTypeError, FileNotFoundError, ValueError) as exc:
        print(f"nomabeam {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
