"""Command-line driver: run, sweep, ablation and selfcheck."""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import yaml

from . import output
from .config import DEFAULTS, ExperimentConfig, parse_config, validate
from .engine import Hooks
from .errors import ConfigurationError, InputError
from .experiment import ABLATION_DEFENSES, final_summary, run_ablation, run_one
from .selfcheck import run_selfcheck

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

SWEEP_AXES = {
    "malicious_level": "attack.pi",
    "malicious_ratio": "malicious_ratio",
    "n_clients": "n_clients",
    "topology": "topology.kind",
    "alpha": "partition.alpha",
}
SWEEP_DEFAULTS = {
    "malicious_level": [1.0, 0.8, 0.6, 0.4, 0.2],
    "malicious_ratio": [0.2, 0.4, 0.6, 0.8],
    "n_clients": [5, 10, 15, 20],
    "topology": ["line", "ring", "star", "grid"],
    "alpha": [0.2, 0.4, 0.6, 0.8, 1.0],
}
SUMMARY_COLUMNS = (
    "axis", "value", "defense", "attack", "n_seeds",
    "test_acc_mean", "test_acc_std", "attack_acc_mean", "attack_acc_std",
    "n_excluded_mean", "consensus_error_mean",
)
ABLATION_COLUMNS = ("seed", "defense", "class1_acc", "class0_asr", "test_acc", "n_excluded")
FAULTS = {
    "compensator": Hooks(compensator_scale=1.0 + 1e-6),
    "latch-renorm": Hooks(latch_renormalize=False),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def parse_seeds(text: str) -> list[int]:
    """'0,1,2' or '0-4' or a mix such as '0-2,7'."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigurationError(f"cannot read seed list {text!r}", "seeds") from None
    if not seeds or min(seeds) < 0:
        raise ConfigurationError(f"cannot read seed list {text!r}", "seeds")
    return seeds


def load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else validate({})
    if getattr(args, "seeds", None):
        cfg = cfg.updated({"seeds": parse_seeds(args.seeds)})
    return cfg


def run_rows(values: dict, defense: str, attack: str, seed: int) -> list[dict]:
    """One simulation flattened to output rows; top-level so worker processes can pickle it."""
    cfg = ExperimentConfig(values)
    res = run_one(cfg, defense, attack, seed)
    timing = cfg["output.timing"]
    rows = []
    for rec in res.records:
        rows.append({
            "seed": seed,
            "round": rec.round,
            "defense": defense,
            "attack": attack,
            "distribution": cfg["partition.kind"],
            "topology": cfg["topology.kind"],
            "test_acc": rec.test_accuracy,
            "attack_acc": rec.attack_accuracy,
            "tracking_residual": rec.tracking_residual,
            "consensus_error": rec.consensus_error,
            "n_excluded": rec.n_excluded,
            "wall_time_ms": rec.wall_time_ms if timing else 0.0,
        })
    return rows


def _jobs(cfg: ExperimentConfig):
    return [(cfg.values, d, a, s) for a in cfg["attack.kinds"] for d in cfg["defenses"] for s in cfg["seeds"]]


def execute(jobs, parallel: int) -> list[list[dict]]:
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(run_rows, *zip(*jobs)))
    return [run_rows(*job) for job in jobs]


def _out_path(args, cfg: ExperimentConfig) -> str:
    return args.out or cfg["output.path"]


def _format(path: str, cfg: ExperimentConfig) -> str:
    return "jsonl" if str(path).endswith(".jsonl") else cfg["output.format"]


def cmd_run(args) -> int:
    cfg = load_config(args)
    rows = [r for chunk in execute(_jobs(cfg), args.parallel) for r in chunk]
    path = _out_path(args, cfg)
    written = output.write_rows(output.sort_rows(rows), path, _format(path, cfg))
    print(f"wrote {len(rows)} rows to {written}")
    return EXIT_OK


def sweep_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    key = SWEEP_AXES[axis]
    update = {key: value}
    if axis == "alpha" and cfg["partition.kind"] not in ("label_dirichlet", "quantity_dirichlet"):
        update["partition.kind"] = "label_dirichlet"
    return cfg.updated(update)


def _parse_value(axis: str, text: str):
    if axis == "topology":
        return text
    if axis == "n_clients":
        return int(text)
    return float(text)


def summarize(axis: str, value, chunks: list[list[dict]]) -> list[dict]:
    finals: dict[tuple, list[dict]] = {}
    for chunk in chunks:
        last = chunk[-1]
        finals.setdefault((last["defense"], last["attack"]), []).append(last)
    out = []
    for (defense, attack), recs in sorted(finals.items()):
        acc_m, acc_s = final_summary(r["test_acc"] for r in recs)
        asr_m, asr_s = final_summary(r["attack_acc"] for r in recs)
        out.append({
            "axis": axis, "value": value, "defense": defense, "attack": attack, "n_seeds": len(recs),
            "test_acc_mean": acc_m, "test_acc_std": acc_s,
            "attack_acc_mean": asr_m, "attack_acc_std": asr_s,
            "n_excluded_mean": final_summary(r["n_excluded"] for r in recs)[0],
            "consensus_error_mean": final_summary(r["consensus_error"] for r in recs)[0],
        })
    return out


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    values = [_parse_value(args.axis, v) for v in args.values.split(",")] if args.values \
        else SWEEP_DEFAULTS[args.axis]
    configs = [sweep_config(cfg, args.axis, v) for v in values]
    summary = []
    for value, vcfg in zip(values, configs):
        chunks = execute(_jobs(vcfg), args.parallel)
        summary.extend(summarize(args.axis, value, chunks))
    path = _out_path(args, cfg)
    written = output.write_rows(summary, path, _format(path, cfg), SUMMARY_COLUMNS)
    for row in summary:
        print(f"{args.axis}={row['value']} {row['defense']:>9} {row['attack']}: "
              f"acc {row['test_acc_mean']:.3f}±{row['test_acc_std']:.3f} "
              f"asr {row['attack_acc_mean']:.3f}±{row['attack_acc_std']:.3f}")
    print(f"wrote {len(summary)} summary rows to {written}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = load_config(args)
    rows = run_ablation(cfg, cfg["seeds"], ABLATION_DEFENSES)
    table = [{
        "seed": r.seed, "defense": r.defense, "class1_acc": r.kept_class_acc,
        "class0_asr": r.poisoned_class_asr, "test_acc": r.test_acc, "n_excluded": r.n_excluded,
    } for r in rows]
    table = output.sort_rows(table, ("defense", "seed"))
    path = _out_path(args, cfg)
    written = output.write_rows(table, path, _format(path, cfg), ABLATION_COLUMNS)
    print(f"{'defense':>8} {'class-1 acc':>12} {'class-0 ASR':>12} {'overall':>8}")
    for d in ABLATION_DEFENSES:
        sel = [r for r in table if r["defense"] == d]
        c1 = final_summary(r["class1_acc"] for r in sel)[0]
        asr = final_summary(r["class0_asr"] for r in sel)[0]
        acc = final_summary(r["test_acc"] for r in sel)[0]
        print(f"{d:>8} {c1:12.4f} {asr:12.4f} {acc:8.4f}")
    print(f"wrote {len(table)} rows to {written}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    hooks = FAULTS[args.inject_fault] if args.inject_fault else Hooks()
    results = run_selfcheck(hooks)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed invariants: " + ", ".join(failed), file=sys.stderr)
        return EXIT_RUNTIME
    print(f"all {len(results)} invariants hold")
    return EXIT_OK


def cmd_defaults(args) -> int:
    print(yaml.safe_dump(DEFAULTS, sort_keys=False), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gpdfl", description="Decentralized learning simulator with gradient purification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, parallel=True):
        p.add_argument("--config", metavar="PATH", help="YAML config of dotted keys (defaults if omitted)")
        p.add_argument("--out", metavar="PATH", help="output file; overrides output.path")
        p.add_argument("--seeds", metavar="LIST", help="comma list or range, e.g. 0-4")
        if parallel:
            p.add_argument("--parallel", metavar="N", type=int, default=1, help="worker processes")

    p = sub.add_parser("run", help="one run per seed, defense and attack; per-round rows")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="final-round summary across one parameter axis")
    common(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", metavar="LIST", help="comma-separated axis values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablation", help="beneficial-component scenario for gpd, upper and lower")
    common(p, parallel=False)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("selfcheck", help="run the invariant checks")
    p.add_argument("--inject-fault", choices=sorted(FAULTS), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("defaults", help="print the default config")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "parallel", 1) < 1:
        print("gpdfl: error: --parallel must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ConfigurationError, InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"gpdfl: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"gpdfl: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
