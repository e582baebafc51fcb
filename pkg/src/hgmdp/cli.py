"""Command-line entry point: ``hgmdp <subcommand>`` or ``python -m hgmdp``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 audit failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .attacks import AttackConfig, AttackFamily, iterated_attack
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import DEFAULT_SWEEP, CertParams, desk_config, desk_data, evaluate
from .mechanisms import DomainError, PrivacyParams, calibrate_analytic, calibrate_classic, calibrate_extended
from .privacy_audit import AuditReport, audit_mechanism
from .robustness import CertificationNotApplicable, certify
from .rng import spawn
from .secure_sgd import TrainConfig, train, train_dpsgd_baseline

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_AUDIT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- calibrate -------------------------------------------------------------------


def cmd_calibrate(args):
    if args.eps_steps < 1 or args.eps_min <= 0 or args.eps_max < args.eps_min:
        raise UsageError("need 0 < eps-min <= eps-max and eps-steps >= 1")
    lines = ["epsilon,delta,sensitivity,sigma_classic,sigma_extended,sigma_analytic"]
    for eps in np.linspace(args.eps_min, args.eps_max, args.eps_steps):
        p = PrivacyParams(float(eps), args.delta)
        classic = repr(calibrate_classic(p, args.sensitivity)) if eps <= 1.0 else ""
        lines.append(
            f"{float(eps)!r},{args.delta!r},{args.sensitivity!r},{classic},"
            f"{calibrate_extended(p, args.sensitivity)!r},{calibrate_analytic(p, args.sensitivity)!r}"
        )
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


# -- audit -----------------------------------------------------------------------


def cmd_audit(args):
    if args.mechanism == "classic" and args.epsilon > 1:
        raise UsageError("the classic mechanism is only defined for epsilon <= 1")
    report = audit_mechanism(args.mechanism, args.epsilon, args.delta, args.sensitivity, args.samples, args.seed)
    _write(AuditReport.CSV_HEADER + "\n" + report.csv_row() + "\n", args.out)
    return EXIT_OK if report.passed else EXIT_AUDIT


# -- datasets --------------------------------------------------------------------


def _dataset_info(args) -> dict:
    if args.dataset == "synthetic":
        return {
            "name": "synthetic",
            "n_train": args.n_train,
            "n_test": args.n_test,
            "d": args.synthetic_d,
            "classes": args.classes,
            "seed": args.data_seed,
        }
    return {"name": "mnist", "limit": args.n_train, "test_limit": args.n_test, "data_dir": args.data_dir}


def load_dataset(info: dict, split: str):
    if info["name"] == "synthetic":
        tr, te = desk_data(info["seed"], info["n_train"], info["n_test"], info["d"], info["classes"])
        return tr if split == "train" else te
    limit = info["limit"] if split == "train" else info.get("test_limit")
    return data_mod.load_mnist(split, info.get("data_dir"), limit)


# -- train -----------------------------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name, value):
    default = TrainConfig.__dataclass_fields__[name].default
    if name == "hidden":
        return tuple(int(v) for v in str(value).replace(",", " ").split())
    if name == "conv":
        raise UsageError("conv first layers are configured from Python, not the CLI")
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys are TrainConfig fields."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return values


def build_config(args) -> TrainConfig:
    values = desk_config(seed=0).to_dict() if args.dataset == "synthetic" else {}
    values.pop("conv", None)
    if args.config:
        values.update(read_config_file(args.config))
    for name in _FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _coerce(name, flag)
    try:
        return TrainConfig(**values)
    except (ValueError, TypeError) as err:
        raise UsageError(str(err)) from err


def cmd_train(args):
    config = build_config(args)
    info = _dataset_info(args)
    ds = load_dataset(info, "train")
    fn = train_dpsgd_baseline if args.baseline else train
    tm = fn(config, ds)
    out = Path(args.out)
    save_checkpoint(tm, out, info)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log.csv")
    rows = ["step,loss,grad_norm_mean"] + [f"{s},{loss!r},{g!r}" for s, loss, g in tm.history]
    log_path.write_text("\n".join(rows) + "\n")
    return EXIT_OK


# -- certify / attack / evaluate ------------------------------------------------


def _test_inputs(info, split, limit):
    ds = load_dataset(info, split)
    return ds.subset(slice(0, limit)) if limit else ds


def cmd_certify(args):
    tm, info = load_checkpoint(args.model)
    ds = _test_inputs(info, args.dataset_split, args.limit)
    streams = spawn(args.seed, len(ds))
    lines = ["index,label,mu_max,is_robust"]
    try:
        for i in range(len(ds)):
            res = certify(tm, ds.inputs[i], args.mu_a, args.n_draws, args.eta, streams[i])
            lines.append(f"{i},{res.label},{float(res.mu_max)!r},{int(res.is_robust)}")
    except CertificationNotApplicable as err:
        raise UsageError(str(err)) from err
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_attack(args):
    tm, info = load_checkpoint(args.model)
    ds = _test_inputs(info, args.dataset_split, args.limit)
    cfg = AttackConfig(args.family, args.mu_a, args.steps, args.momentum_decay, not args.no_random_start, args.seed)
    X_adv = iterated_attack(tm, ds.inputs, ds.labels, cfg)
    clean = tm.model.predict(ds.inputs, tm.gamma)
    adv = tm.model.predict(X_adv, tm.gamma)
    dist = np.abs(X_adv - ds.inputs).max(axis=1)
    lines = ["index,true_label,pred_clean,pred_adv,linf_dist"]
    lines += [f"{i},{ds.labels[i]},{clean[i]},{adv[i]},{float(dist[i])!r}" for i in range(len(ds))]
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _sweep(text):
    return tuple(float(v) for v in text.split(",")) if text else DEFAULT_SWEEP


def cmd_evaluate(args):
    tm, info = load_checkpoint(args.model)
    ds = _test_inputs(info, args.dataset_split, args.limit)
    attack = None
    if args.family and args.mu_a > 0:
        attack = AttackConfig(args.family, args.mu_a, args.steps, seed=args.seed)
    report = evaluate(tm, ds, attack, CertParams(args.n_draws, args.eta, args.seed), _sweep(args.mu_sweep))
    _write(report.to_csv(), args.out)
    return EXIT_OK


def cmd_report(args):
    """Desk-scale comparison of Secure-SGD (HGM / AGM noise) and plain DP-SGD."""
    from .evaluation import DESK_SCALE_NOTE, REFERENCE_SEED

    seed = REFERENCE_SEED if args.seed is None else args.seed
    train_ds, test_ds = desk_data(seed, n_test=args.n_test)
    attack = AttackConfig(args.family, args.mu_a, args.steps, seed=seed) if args.mu_a > 0 else None
    cert = CertParams(args.n_draws, args.eta, seed)
    lines = [f"# {DESK_SCALE_NOTE}", f"# seed={seed} attack={args.family}:{args.mu_a}"]
    lines.append("variant,mu_a,conventional_accuracy,certified_accuracy")
    failed = False
    variants = [("secure_sgd_hgm", "hgm", True), ("secure_sgd_agm", "agm", True), ("dpsgd", "hgm", False)]
    for name, mech, gamma in variants:
        tm = train(desk_config(seed, mechanism=mech), train_ds, gamma_enabled=gamma)
        rep = evaluate(tm, test_ds, attack, cert, _sweep(args.mu_sweep))
        for row in rep.rows:
            cert_acc = "" if row["certified"] is None else repr(row["certified"])
            lines.append(f"{name},{row['mu_a']!r},{row['conventional']!r},{cert_acc}")
            if row["certified"] is not None and row["certified"] > row["conventional"]:
                failed = True
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_AUDIT if failed else EXIT_OK


# -- parser ----------------------------------------------------------------------


def _add_dataset_flags(p):
    p.add_argument("--dataset", choices=["mnist", "synthetic"], default="synthetic")
    p.add_argument("--data-dir", default=None, help=f"MNIST directory (default: ${data_mod.DATA_DIR_ENV} or ./data)")
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--synthetic-d", type=int, default=10)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--data-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hgmdp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="noise scale of the classic, extended and analytic mechanisms")
    p.add_argument("--eps-min", type=float, default=0.1)
    p.add_argument("--eps-max", type=float, default=3.0)
    p.add_argument("--eps-steps", type=int, default=30)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--sensitivity", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; calibration is deterministic")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("audit", help="check Pr(|privacy loss| > eps) <= delta for a calibrated mechanism")
    p.add_argument("--mechanism", choices=["classic", "extended", "heterogeneous", "analytic"], default="extended")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--sensitivity", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("train", help="run Secure-SGD (or the DP-SGD baseline) and save a checkpoint")
    p.add_argument("--config", help="flat key = value file; flags override it")
    for name, f in _FIELDS.items():
        if name == "conv":
            continue
        flag = "--" + name.replace("_", "-")
        if isinstance(f.default, bool):
            p.add_argument(flag, default=None, choices=["true", "false"])
        elif name == "mechanism":
            p.add_argument(flag, default=None, choices=["hgm", "agm", "extended"])
        else:
            p.add_argument(flag, default=None, help=f"default {f.default}")
    p.add_argument("--baseline", action="store_true", help="plain DP-SGD, no h1 noise")
    _add_dataset_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="progress CSV (default: <out>.log.csv)")
    p.set_defaults(func=cmd_train)

    def model_cmd(name, help_):
        q = sub.add_parser(name, help=help_)
        q.add_argument("--model", required=True)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--dataset-split", choices=["train", "test"], default="test")
        q.add_argument("--limit", type=int)
        q.add_argument("--out")
        return q

    p = model_cmd("certify", "Monte-Carlo robustness certification per test input")
    p.add_argument("--mu-a", type=float, required=True)
    p.add_argument("--n-draws", type=int, default=300)
    p.add_argument("--eta", type=float, default=0.95)
    p.set_defaults(func=cmd_certify)

    p = model_cmd("attack", "white-box l_inf attack on the deployed model")
    p.add_argument("--family", choices=[f.value for f in AttackFamily], default="ifgsm")
    p.add_argument("--mu-a", type=float, required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--momentum-decay", type=float, default=1.0)
    p.add_argument("--no-random-start", action="store_true")
    p.set_defaults(func=cmd_attack)

    p = model_cmd("evaluate", "conventional and certified accuracy over a mu_a sweep")
    p.add_argument("--family", choices=[f.value for f in AttackFamily])
    p.add_argument("--mu-a", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--n-draws", type=int, default=300)
    p.add_argument("--eta", type=float, default=0.95)
    p.add_argument("--mu-sweep", help="comma-separated thresholds (default 0.05..0.5)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="desk-scale comparison of Secure-SGD variants and DP-SGD")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--family", choices=[f.value for f in AttackFamily], default="ifgsm")
    p.add_argument("--mu-a", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--n-draws", type=int, default=300)
    p.add_argument("--eta", type=float, default=0.95)
    p.add_argument("--mu-sweep")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (UsageError, DomainError) as err:
        print(f"hgmdp {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (data_mod.FormatError, FileNotFoundError) as err:
        print(f"hgmdp {args.command}: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
