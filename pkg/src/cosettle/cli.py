"""Command-line entry point: ``cosettle <subcommand> [flags]``.

Every subcommand writes its result to a file, prints one summary line on
stdout and logs to stderr. Exit codes: 0 success, 1 invalid input or
configuration, 2 numeric failure (including a failing gradient check),
64 unknown subcommand or flag.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import apply_overrides, read_kv_file
from .data import SyntheticModelSpec, generate_corpus, read_corpus, write_corpus
from .errors import CoSettleError, NumericError, ParameterError
from .gradcheck import run_gradcheck
from .metrics import DEFAULT_GAMMA, evaluate
from .pea import PROBE_SETTINGS, ProbeConfig, shortcut_probe, sinusoidal_grid
from .projection import load_checkpoint, save_checkpoint
from .theory import verify_spectrum
from .trainer import KEY_ALIASES, TrainConfig, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_USAGE = 64

log = logging.getLogger("cosettle")

# fields reachable through the shared --seed / --threads flags
_COMMON_FIELDS = ("seed", "threads")
_FLAG_NAMES = {"lam": "lambda"}

SPEC_DEFAULTS = {
    "dim": 64, "n_h": 7, "n_w": 7, "frames_per_video": 8, "videos": 200,
    "intra_cov": 1.0, "inter_cov": 1.0, "seed": 0,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        # prefix matching would let e.g. --lr silently mean --lr-scale-divisor
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _field_type(f):
    return f.type if isinstance(f.type, str) else f.type.__name__


def _add_dataclass_flags(parser, cls, skip=()):
    """One ``--field-name`` flag per dataclass field; unset flags do not override anything."""
    group = parser.add_argument_group(f"{cls.__name__} overrides")
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        flag = "--" + _FLAG_NAMES.get(f.name, f.name).replace("_", "-")
        group.add_argument(flag, dest=f"set_{f.name}", default=argparse.SUPPRESS,
                           metavar=_field_type(f).upper(), help=f"default {f.default!r}")


def _overrides(args):
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("set_")}


def _resolve(base, args, aliases=None):
    """Defaults < ``--config`` file < flag overrides < ``--seed``/``--threads``."""
    cfg = base
    if args.config:
        cfg = apply_overrides(cfg, read_kv_file(args.config), aliases)
    cfg = apply_overrides(cfg, _overrides(args), aliases)
    names = {f.name for f in dataclasses.fields(cfg)}
    common = {k: getattr(args, k) for k in _COMMON_FIELDS if k in names and getattr(args, k) is not None}
    return apply_overrides(cfg, common)


def _parse_cov(text):
    """``"2.5"`` -> scalar, ``"1,2,3"`` -> diagonal."""
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise ParameterError(f"cannot parse covariance {text!r}") from None
    return vals[0] if len(vals) == 1 else vals


def build_spec(args):
    fields = dict(SPEC_DEFAULTS)
    if args.config:
        fields.update(read_kv_file(args.config))
    if args.spec:
        fields.update(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    fields.update(_overrides(args))
    if args.seed is not None:
        fields["seed"] = args.seed
    unknown = set(fields) - set(SPEC_DEFAULTS)
    if unknown:
        raise ParameterError(f"unknown spec keys {sorted(unknown)}")
    for key in ("intra_cov", "inter_cov"):
        if isinstance(fields[key], str):
            fields[key] = _parse_cov(fields[key])
    try:
        ints = {k: int(fields[k]) for k in ("dim", "n_h", "n_w", "frames_per_video", "videos", "seed")}
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"bad spec value: {exc}") from None
    return SyntheticModelSpec(intra_cov=fields["intra_cov"], inter_cov=fields["inter_cov"], **ints)


# --- subcommands ----------------------------------------------------------------


def cmd_gen(args):
    spec = build_spec(args)
    corpus = generate_corpus(spec)
    write_corpus(args.out, corpus)
    return f"gen: {len(corpus)} videos -> {args.out} sha256={sha256_file(args.out)}"


def cmd_train(args):
    cfg = _resolve(TrainConfig(), args, KEY_ALIASES)
    cfg.validate()
    corpus = read_corpus(args.corpus)
    log.info("training %d videos for %d epochs, peak lr %.3g", len(corpus), cfg.epochs, cfg.peak_lr)
    params, history = train(corpus, cfg)
    save_checkpoint(args.out, params)
    hist_path = args.history or str(args.out) + ".history.jsonl"
    history.write(hist_path)
    last = history.steps[-1]
    return (f"train: {len(history.steps)} steps, final loss {last.total:.6g} -> {args.out} "
            f"sha256={sha256_file(args.out)}")


def cmd_eval(args):
    cfg = _resolve(TrainConfig(), args, KEY_ALIASES)
    corpus = read_corpus(args.corpus)
    params = load_checkpoint(args.checkpoint) if args.checkpoint else None
    first = corpus[0]
    pos = None
    if cfg.pos_scale:
        pos = sinusoidal_grid(first.n_h, first.n_w, first.dim).scaled(cfg.pos_scale).values
    gamma = DEFAULT_GAMMA if args.gamma is None else args.gamma
    m = evaluate(corpus, cfg.delta, cfg.temperature, params, pos, gamma)
    out = {
        "metrics": m.to_dict(),
        "corpus_sha256": sha256_file(args.corpus),
        "checkpoint_sha256": sha256_file(args.checkpoint) if args.checkpoint else None,
        "settings": {"delta": cfg.delta, "temperature": cfg.temperature,
                     "pos_scale": cfg.pos_scale, "gamma": gamma},
    }
    dump_json(out, args.out)
    return f"eval: margin {m.margin:.4f} cyc_acc {m.cyc_acc:.4f} -> {args.out}"


def _load_sigma(args):
    sigma, lam = args.sigma, args.lam
    if args.spec:
        data = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        sigma = data.get("sigma", sigma)
        lam = data.get("lambda", lam)
    if sigma is None or lam is None:
        raise ParameterError("verify-theory needs a spectrum (--sigma or --spec) and --lambda")
    if isinstance(sigma, str):
        sigma = _parse_cov(sigma)
    return np.atleast_1d(np.asarray(sigma, dtype=np.float64)), float(lam)


def cmd_verify_theory(args):
    sigma, lam = _load_sigma(args)
    report = verify_spectrum(sigma, lam, args.mode, args.samples, 0 if args.seed is None else args.seed)
    dump_json(report.to_dict(), args.out)
    err = report.diagnostics["max_abs_error"]
    return (f"verify-theory: max |mu_hat - mu*| {err:.3g}, delta closed {report.delta_closed:.6g} "
            f"empirical {report.delta_empirical:.6g} -> {args.out}")


def cmd_gradcheck(args):
    report = run_gradcheck(args.instances, 0 if args.seed is None else args.seed, tol=args.tol)
    if args.out:
        dump_json(report.to_dict(), args.out)
    verdict = "pass" if report.passed else "FAIL"
    line = f"gradcheck: {verdict}, {len(report.results)} checks, max rel error {report.max_error:.3g}"
    if not report.passed:
        raise NumericError(line)
    return line


def cmd_probe(args):
    cfg = _resolve(ProbeConfig(), args)
    report = shortcut_probe(args.setting, cfg)
    Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return (f"probe-shortcut: {args.setting} alpha={cfg.alpha} final identity accuracy "
            f"{report.identity_accuracy[-1]:.4f} -> {args.out}")


# --- parser ---------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--seed", type=int, help="random seed (unsigned)")
    common.add_argument("--threads", type=int, help="worker threads; 1 is bit-reproducible")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    parser = _Parser(prog="cosettle", description="Consistency/separability trade-off toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND",
                                parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="synthetic spec -> corpus file")
    p.add_argument("--spec", help="JSON file with SyntheticModelSpec fields")
    for key in SPEC_DEFAULTS:
        if key != "seed":
            p.add_argument("--" + key.replace("_", "-"), dest=f"set_{key}", default=argparse.SUPPRESS,
                           help=f"default {SPEC_DEFAULTS[key]!r}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="corpus + config -> checkpoint + history")
    p.add_argument("--corpus", required=True)
    p.add_argument("--history", help="JSON-lines history path (default OUT.history.jsonl)")
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_dataclass_flags(p, TrainConfig, skip=_COMMON_FIELDS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="corpus + optional checkpoint -> metrics JSON")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--gamma", type=float, help=f"margin scale factor (default {DEFAULT_GAMMA})")
    p.add_argument("--out", required=True)
    _add_dataclass_flags(p, TrainConfig, skip=_COMMON_FIELDS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-theory", parents=[common], help="spectrum -> spectral report JSON")
    p.add_argument("--spec", help='JSON file {"sigma": [...], "lambda": x}')
    p.add_argument("--sigma", help="comma-separated eigenvalues")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mode", choices=("eigenbasis", "full"), default="eigenbasis")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("probe-shortcut", parents=[common], help="positional shortcut probe")
    p.add_argument("--setting", choices=PROBE_SETTINGS, default="shuffled")
    p.add_argument("--out", required=True)
    _add_dataclass_flags(p, ProbeConfig, skip=_COMMON_FIELDS)
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    if args.seed is not None and args.seed < 0:
        log.error("--seed must be non-negative")
        return EXIT_VALIDATION
    try:
        line = args.func(args)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (CoSettleError, ValueError, OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
