"""Command line entry point ``sbnlab``.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

from ..estimators.kinds import EstimatorKind
from .config import ConfigError, defaults, parse_config
from .data import BowFormatError


def _load(args):
    cfg = parse_config(args.config) if getattr(args, "config", None) else defaults()
    if getattr(args, "seed", None) is not None:
        cfg.set("experiment", "base_seed", args.seed)
    if getattr(args, "out", None):
        cfg.set("experiment", "output", args.out)
    if getattr(args, "top_words", None) is not None:
        cfg.set("data", "top_words", args.top_words)
    return cfg


def _out(cfg):
    return os.environ.get("SBNLAB_OUT") or cfg.get("experiment", "output")


def cmd_verify(args):
    from .verify import run_verify
    cfg = _load(args)
    rows = run_verify(cfg.get("experiment", "base_seed"), _out(cfg))
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['suite']}.{r['check']} value={r['value']:.6g} tol={r['tolerance']:g}")
    failed = sum(not r["passed"] for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed; report in {os.path.join(_out(cfg), 'verify.csv')}")
    return 1 if failed else 0


def cmd_autoenc(args):
    from .experiments import run_autoencoder
    cfg = _load(args)
    if args.bits is not None:
        cfg.set("network", "bits", args.bits)
    if args.estimator is not None:
        cfg.set("experiment", "estimator", str(EstimatorKind.parse(args.estimator)))
    res = run_autoencoder(cfg)
    print(f"loss at switch {res['switch_loss']:.6f}, final {res['final_loss']:.6f}; wrote {res['csv']}")
    return 0


def cmd_accuracy(args):
    from .experiments import run_accuracy_protocol
    res = run_accuracy_protocol(_load(args))
    print(f"wrote {res['csv']}")
    return 0


def cmd_gumbel(args):
    from .experiments import run_gumbel_sweep
    cfg = _load(args)
    taus = None
    if args.tau:
        try:
            taus = [float(t) for t in args.tau.split(",") if t.strip()]
        except ValueError:
            raise ConfigError(f"--tau expects comma-separated numbers, got {args.tau!r}") from None
        if any(not t > 0 for t in taus):
            raise ConfigError("--tau values must be positive")
    res = run_gumbel_sweep(cfg, taus)
    print(f"wrote {res['csv']}")
    return 0


def cmd_bayesbinn(args):
    from .experiments import run_bayesbinn_demo
    res = run_bayesbinn_demo(_load(args))
    for s in res["summary"]:
        print(f"run {s['run']}: trajectories coincide from step {s['coincide_from']}")
    print(f"wrote {res['csv']}")
    return 0


def cmd_classifier(args):
    from .experiments import run_tiny_classifier
    res = run_tiny_classifier(_load(args))
    last = res["rows"][-1] if res["rows"] else None
    if last:
        print(f"det accuracy {last['det_accuracy']:.3f}, ensemble accuracy {last['ensemble_accuracy']:.3f}")
    print(f"wrote {res['csv']}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="sbnlab", description="Gradient-estimator laboratory for stochastic binary networks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="experiment config file")
        sp.add_argument("--seed", type=int, help="override experiment.base_seed")
        sp.add_argument("--out", help="output directory (SBNLAB_OUT takes precedence)")

    sp = sub.add_parser("verify", help="run the property suites")
    common(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("autoenc", help="train the toy autoencoder (candidate phase, then correction)")
    common(sp, True)
    sp.add_argument("--bits", type=int)
    sp.add_argument("--estimator")
    sp.add_argument("--top-words", type=int, dest="top_words")
    sp.set_defaults(func=cmd_autoenc)

    sp = sub.add_parser("accuracy", help="estimator accuracy along a reference trajectory")
    common(sp, True)
    sp.add_argument("--top-words", type=int, dest="top_words")
    sp.set_defaults(func=cmd_accuracy)

    sp = sub.add_parser("gumbel", help="Gumbel-Softmax Monte Carlo versus quadrature")
    common(sp)
    sp.add_argument("--tau", help="comma-separated temperatures, e.g. 1,0.5,0.1,0.05")
    sp.set_defaults(func=cmd_gumbel)

    sp = sub.add_parser("bayesbinn", help="BayesBiNN replica versus collapsed trajectories")
    common(sp, True)
    sp.set_defaults(func=cmd_bayesbinn)

    sp = sub.add_parser("classifier", help="tiny deep SBN classifier trained by ST")
    common(sp, True)
    sp.set_defaults(func=cmd_classifier)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, BowFormatError) as exc:
        print(f"sbnlab: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"sbnlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
