"""Command line: ``dpotsim run | theory-check | defense-bench | gen-data``.

Exit codes: 0 success, 1 bad configuration or usage, 2 file I/O problems.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import sys
from pathlib import Path

from . import attack as atk
from .bench import run_bench
from .config import apply_seed_override, format_config, load_config
from .data import generate_synthetic, save_idx, train_test_split
from .defenses import DEFENSES
from .engine import ATTACKS, FLConfig, run_experiment
from .errors import FormatError
from .metrics import write_rounds_csv, write_summary_csv, write_telemetry_csv
from .theory import run_theory_checks


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _positive_float(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return val


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpotsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one federated experiment")
    run.add_argument("--config", required=True, help="key = value config file")
    run.add_argument("--out", default="out", help="directory for CSV logs and triggers")
    run.add_argument("--defense", choices=DEFENSES)
    run.add_argument("--attack", choices=ATTACKS)
    run.add_argument("--dataset", choices=("synth", "idx"))
    run.add_argument("--scaling-factor", type=_positive_float)
    run.add_argument("--rounds", type=int)
    run.add_argument("--baseline", action="store_true",
                     help="also run without attack and report the MA difference")

    th = sub.add_parser("theory-check", help="linear-regression trigger checks")
    th.add_argument("--trials", type=int, default=200)
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--alpha", type=float, default=0.5)
    th.add_argument("--out", default=None, help="directory for theory.csv")

    bench = sub.add_parser("defense-bench", help="oracle checks for one aggregation rule")
    bench.add_argument("--defense", required=True, choices=DEFENSES)
    bench.add_argument("--seed", type=int, default=0)

    gen = sub.add_parser("gen-data", help="write the synthetic dataset as IDX files")
    gen.add_argument("--out", required=True)
    gen.add_argument("--config", default=None)
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {k: v for k, v in (("defense", args.defense), ("attack", args.attack),
                                   ("dataset", args.dataset), ("scaling_factor", args.scaling_factor),
                                   ("rounds", args.rounds)) if v is not None}
    cfg = apply_seed_override(dataclasses.replace(cfg, **overrides)).validate()
    log = run_experiment(cfg, baseline=args.baseline)

    out = Path(args.out)
    (out / "triggers").mkdir(parents=True, exist_ok=True)
    write_rounds_csv(log.records, out / "rounds.csv")
    write_summary_csv(log.summary, out / "summary.csv")
    write_telemetry_csv(log.records, out / "telemetry.csv")
    text = format_config(cfg)
    (out / "config.txt").write_text(text)
    for rec in log.records:
        (out / "triggers" / f"round_{rec.round:03d}.txt").write_text(atk.format_trigger(rec.trigger))

    digest = hashlib.sha256(text.encode()).hexdigest()[:12]
    print(f"defense={cfg.defense} attack={cfg.attack} rounds={cfg.rounds} "
          f"malicious={log.malicious_ids} config={digest}")
    print(log.summary.format())
    return 0


def _cmd_theory(args) -> int:
    report = run_theory_checks(args.trials, args.seed, alpha=args.alpha)
    print(report.format())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "theory.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["prop", "trials", "passes"])
            w.writerows(report.csv_rows())
    return 0


def _cmd_bench(args) -> int:
    checks = run_bench(args.defense, args.seed)
    width = max(len(name) for name, _ in checks)
    for name, ok in checks:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}")
    return 0 if all(ok for _, ok in checks) else 1


def _cmd_gen(args) -> int:
    cfg = load_config(args.config) if args.config else apply_seed_override(FLConfig())
    shape = (cfg.image_size, cfg.image_size)
    full = generate_synthetic(cfg.n_classes, cfg.per_class, shape, cfg.noise_sigma, cfg.data_seed,
                              cfg.template_density)
    train, test = train_test_split(full, cfg.test_fraction, cfg.data_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_idx(train, out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte")
    save_idx(test, out / "test-images-idx3-ubyte", out / "test-labels-idx1-ubyte")
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")
    return 0


COMMANDS = {"run": _cmd_run, "theory-check": _cmd_theory, "defense-bench": _cmd_bench, "gen-data": _cmd_gen}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (OSError, FormatError) as exc:
        print(f"dpotsim: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # ConfigError and the other validation errors
        print(f"dpotsim: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
