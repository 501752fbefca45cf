"""Command-line front end.

Subcommands run a synthetic experiment or user data through one stage or the
whole pipeline and write plain-text data files plus ``report.json``.

Exit codes: 0 success, 1 usage, 2 input/output, 3 validation, 4 solver.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .altmin import AltMinConfig, SolverDivergence
from .fbd import (LSBD_CONFIG, HomotopySchedule, fbd_pipeline, fibd, fpr, lsbd, lspr,
                  suggest_front_channel)
from .focusing import appendix_check
from .model import (ChannelSet, InterferogramSet, SourceAutocorr, build_interferograms,
                    max_normalize_interferograms)
from .seqcore import Sequence
from .synth import EXPERIMENTS, ExperimentSpec, make_experiment, recovery_score

logger = logging.getLogger("fbdkit")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_SOLVER = 0, 1, 2, 3, 4

EPILOG = """exit codes:
  0  success
  1  usage error (bad flags or config keys)
  2  input/output error (missing or malformed files)
  3  validation error (inputs violate a precondition)
  4  solver error (objective increased during a monotone descent)

Every error is reported on stderr as  fbd: error[<category>]: <message>
"""


class UsageError(Exception):
    pass


class FormatError(OSError):
    pass


# ---------------------------------------------------------------------------
# file formats

def _fmt(x: float) -> str:
    return "%.17g" % x


def write_channelset(path, cs: ChannelSet):
    """Header line, then one row per time sample, one column per channel."""
    lines = [f"# fbd-channelset nr={cs.nr} origin={cs.origin} len={cs.span}"]
    for row in np.asarray(cs.data).T:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _header(line: str, kind: str) -> dict:
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != "#" or tokens[1] != kind:
        raise FormatError(f"expected a '# {kind}' header, got {line.strip()!r}")
    out = {}
    for tok in tokens[2:]:
        key, _, val = tok.partition("=")
        out[key] = int(val)
    return out


def read_channelset(path) -> ChannelSet:
    text = Path(path).read_text().splitlines()
    if not text:
        raise FormatError(f"{path}: empty file")
    try:
        head = _header(text[0], "fbd-channelset")
        rows = [[float(v) for v in ln.split(",")] for ln in text[1:] if ln.strip()]
        data = np.array(rows, dtype=float).T
        if data.shape != (head["nr"], head["len"]):
            raise FormatError(f"{path}: shape {data.shape} does not match header")
        return ChannelSet(data, head["origin"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_sequence(path, seq: Sequence):
    write_channelset(path, ChannelSet(seq.samples[None, :], seq.origin))


def read_sequence(path) -> Sequence:
    cs = read_channelset(path)
    if cs.nr != 1:
        raise FormatError(f"{path}: expected a single channel")
    return cs[0]


def write_interferograms(path, gij: InterferogramSet):
    """Pair blocks ``# pair i j`` of ``lag,value`` rows, upper triangle only."""
    lines = [f"# fbd-interferograms nr={gij.nr} maxlag={gij.maxlag}"]
    lags = range(-gij.maxlag, gij.maxlag + 1)
    for (i, j), row in zip(gij.pairs, gij.entries):
        lines.append(f"# pair {i} {j}")
        lines.extend(f"{t},{_fmt(v)}" for t, v in zip(lags, row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_interferograms(path) -> InterferogramSet:
    text = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not text:
        raise FormatError(f"{path}: empty file")
    try:
        head = _header(text[0], "fbd-interferograms")
        nr, m = head["nr"], head["maxlag"]
        entries = np.full((nr * (nr + 1) // 2, 2 * m + 1), np.nan)
        probe = InterferogramSet(nr, m, np.zeros_like(entries))
        k = -1
        for ln in text[1:]:
            if ln.startswith("#"):
                parts = ln.split()
                if parts[1] != "pair":
                    raise FormatError(f"unexpected line {ln!r}")
                k = probe.index(int(parts[2]), int(parts[3]))
                continue
            if k < 0:
                raise FormatError("data row before the first pair block")
            t, v = ln.split(",")
            entries[k, int(t) + m] = float(v)
        if np.isnan(entries).any():
            raise FormatError(f"{path}: missing pairs or lags")
        return InterferogramSet(nr, m, entries)
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_autocorr(path, sa: SourceAutocorr):
    write_sequence(path, sa.sequence)


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _flag(text) -> bool:
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _common(p):
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (default: $FBD_SEED or 0)")
    p.add_argument("--epsilon", type=float, default=None,
                   help="stopping tolerance on the per-cycle objective decrease")
    p.add_argument("--max-iters", type=int, default=None, help="outer iteration cap")
    p.add_argument("--psd-projection", action="store_true", default=False,
                   help="project Toeplitz(s_a) onto the PSD cone after each update")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/FFT workers")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=False)


def _experiment_args(p, required=False):
    p.add_argument("--experiment", choices=EXPERIMENTS, required=required)
    p.add_argument("--nr", type=int, default=20)
    p.add_argument("--tau", type=int, default=30)
    p.add_argument("--T", type=int, default=None, help="record length (400; 20*tau for layered)")
    p.add_argument("--snr-db", type=float, default=math.inf)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fbd", description="Focused blind deconvolution toolkit.",
                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic experiment")
    _common(p)
    _experiment_args(p, required=True)

    for name, helptext in (("lsbd", "least-squares blind deconvolution"),
                           ("ibd", "interferometric blind deconvolution"),
                           ("fibd", "focused interferometric blind deconvolution")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--input", required=True, help="channel outputs (fbd-channelset)")
        p.add_argument("--tau", type=int, required=True, help="last response sample")
        if name == "fibd":
            p.add_argument("--alphas", default="inf,0", help="focusing schedule, e.g. inf,0")

    for name, helptext in (("lspr", "least-squares phase retrieval"),
                           ("fpr", "focused phase retrieval")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--input", required=True, help="responses g_ij (fbd-interferograms)")
        if name == "fpr":
            p.add_argument("--front-channel", type=int, default=None,
                           help="0-based front-loaded channel (default: heuristic pick)")
            p.add_argument("--betas", default="inf,0", help="front-loading schedule")

    p = sub.add_parser("pipeline", help="FIBD, FPR and a final LSBD refinement")
    _common(p)
    _experiment_args(p)
    p.add_argument("--input", help="channel outputs (fbd-channelset); else --experiment")
    p.add_argument("--front-channel", type=int, default=None)
    p.add_argument("--alphas", default="inf,0")
    p.add_argument("--betas", default="inf,0")
    p.add_argument("--no-finalize", dest="finalize", action="store_false", default=True,
                   help="skip the final LSBD refinement")

    p = sub.add_parser("appendix-check", help="randomized focusing-functional check")
    _common(p)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--max-len", type=int, default=16)
    return parser


def _read_config(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        values = _read_config(args.config)
    except OSError as exc:
        raise FormatError(f"cannot read config {args.config}: {exc}") from exc
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    for key, val in values.items():
        if key not in actions or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if isinstance(actions[key], (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            values[key] = _flag(val)
    sub.set_defaults(**values)
    # parse again so explicit flags win over file values
    return parser.parse_args(argv)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FBD_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"FBD_SEED must be an integer, got {env!r}") from exc


def _config(args, seed) -> AltMinConfig:
    """Library defaults for the stage, overridden by the given flags."""
    base = LSBD_CONFIG if args.command == "lsbd" else AltMinConfig()
    changes = {"seed": seed, "psd_projection": args.psd_projection}
    if args.epsilon is not None:
        changes["epsilon"] = args.epsilon
    if args.max_iters is not None:
        changes["max_outer_iters"] = args.max_iters
    return replace(base, **changes)


# ---------------------------------------------------------------------------
# commands

def _experiment(args, seed):
    return make_experiment(ExperimentSpec(args.experiment, nr=args.nr, tau=args.tau,
                                          T=args.T, seed=seed, snr_db=args.snr_db))


def _cmd_synth(args, seed, out):
    ex = _experiment(args, seed)
    write_channelset(out / "g_true.csv", ex.truth)
    write_interferograms(out / "gij_true.csv", ex.truth_gij)
    files = ["g_true.csv", "gij_true.csv"]
    if ex.data is not None:
        write_channelset(out / "d.csv", ex.data)
        write_sequence(out / "s_true.csv", ex.source)
        files += ["d.csv", "s_true.csv"]
    return {"files": files}


def _cmd_lsbd(args, seed, out):
    d = read_channelset(args.input)
    res = lsbd(d, args.tau, _config(args, seed), seed)
    write_channelset(out / "ghat.csv", res.g)
    write_sequence(out / "shat.csv", res.s)
    return {"stages": {"lsbd": res.reports["lsbd"].to_dict()}}


def _cmd_fibd(args, seed, out):
    d = read_channelset(args.input)
    dij = max_normalize_interferograms(build_interferograms(d, d.span - 1))
    alphas = HomotopySchedule.parse(args.alphas) if args.command == "fibd" else (0.0,)
    sa, gij, rep = fibd(dij, args.tau, alphas, _config(args, seed), seed)
    write_interferograms(out / "gij.csv", gij)
    write_autocorr(out / "sa.csv", sa)
    return {"stages": {rep.stage: rep.to_dict()}}


def _cmd_pr(args, seed, out):
    gij = read_interferograms(args.input)
    if args.command == "fpr":
        f = suggest_front_channel(gij) if args.front_channel is None else args.front_channel
        g, rep = fpr(gij, f, HomotopySchedule.parse(args.betas), _config(args, seed), seed)
        extra = {"front_channel": int(f)}
    else:
        g, rep = lspr(gij, _config(args, seed), seed)
        extra = {}
    write_channelset(out / "ghat.csv", g)
    return {"stages": {rep.stage: rep.to_dict()}, **extra}


def _cmd_pipeline(args, seed, out):
    ex = None
    if args.input is not None:
        d = read_channelset(args.input)
        tau = args.tau
    elif args.experiment is not None:
        ex = _experiment(args, seed)
        if ex.data is None:
            raise ValueError(f"experiment {args.experiment} provides no channel outputs")
        d, tau = ex.data, args.tau
    else:
        raise UsageError("pipeline needs --input or --experiment")
    res = fbd_pipeline(d, tau, args.front_channel, HomotopySchedule.parse(args.alphas),
                       HomotopySchedule.parse(args.betas), _config(args, seed), seed,
                       finalize=args.finalize)
    write_channelset(out / "ghat.csv", res.g)
    write_sequence(out / "shat.csv", res.s)
    write_interferograms(out / "gij.csv", res.gij)
    summary = {"stages": {k: r.to_dict() for k, r in res.reports.items()}}
    if ex is not None:
        summary["recovery_score"] = {"g": recovery_score(res.g, ex.truth),
                                     "gij": recovery_score(res.gij, ex.truth_gij)}
    return summary


def _cmd_appendix(args, seed, out):
    rng = np.random.default_rng(seed)
    gaps = []
    l1_err = 0.0
    for _ in range(args.trials):
        f = Sequence(int(rng.integers(-4, 5)), rng.random(int(rng.integers(1, args.max_len + 1))))
        phi = Sequence(int(rng.integers(-4, 5)), rng.random(int(rng.integers(1, args.max_len + 1))))
        j_f, j_g, l1_f, l1_g = appendix_check(f, phi)
        gaps.append(j_g - j_f)
        l1_err = max(l1_err, abs(l1_g - l1_f) / l1_f)
    result = {"trials": args.trials, "min_gap": float(min(gaps)),
              "max_l1_relative_error": l1_err, "holds": bool(min(gaps) >= -1e-12)}
    print(f"appendix-check: {args.trials} trials, min(J_G - J_F) = {result['min_gap']:.6g}, "
          f"max l1 relative error = {l1_err:.3g}, "
          f"{'holds' if result['holds'] else 'VIOLATED'}")
    return result


COMMANDS = {"synth": _cmd_synth, "lsbd": _cmd_lsbd, "ibd": _cmd_fibd, "fibd": _cmd_fibd,
            "lspr": _cmd_pr, "fpr": _cmd_pr, "pipeline": _cmd_pipeline,
            "appendix-check": _cmd_appendix}


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _fail(category: str, code: int, message) -> int:
    print(f"fbd: error[{category}]: {message}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    """Execute one CLI invocation; returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        seed = _seed(args)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=args.threads):
            summary = COMMANDS[args.command](args, seed, out)
        report = {"command": args.command, "seed": seed, "version": __version__,
                  "config": {k: _jsonable(v) for k, v in sorted(vars(args).items())},
                  **summary}
        (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    except SolverDivergence as exc:
        return _fail("solver", EXIT_SOLVER, exc)
    except ValueError as exc:
        return _fail("validation", EXIT_VALIDATION, exc)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
