"""Command-line entry point: ``cawm synth|train|fuse|eval|gradcheck|selftest``.

Exit codes::

    0  success
    1  a gradient check or self-test failed
    2  bad command-line usage
    3  a required file or directory is missing
    4  malformed run config (the message names the key)
    5  corrupt checkpoint
    6  unsupported image format
    7  checkpoint does not match the requested model config
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import load_triples, make_triples, write_triples
from .degradation import KINDS, DegradationSpec
from .errors import (CheckpointMismatchError, ConfigFileError, CorruptCheckpointError,
                     UnsupportedFormatError, UsageError)
from .imageio import load_png, save_png
from .metrics import MetricReport, evaluate
from .network import CAWMNet, NetConfig, load_model
from .tensor import Tensor, no_grad

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4
EXIT_CORRUPT = 5
EXIT_FORMAT = 6
EXIT_MISMATCH = 7


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _err(msg: str) -> None:
    print(f"cawm: error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.size < 2:
        raise UsageError("--size must be at least 2")
    spec = DegradationSpec.of(args.kinds, args.severity, args.seed)
    dirs = write_triples(args.out, make_triples(args.n, args.size, spec))
    print(f"wrote {len(dirs)} triples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import RunConfig, train

    cfg = RunConfig.load(args.config)
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir

    def progress(rec):
        if not args.quiet and (rec["step"] == 1 or rec["step"] % args.print_every == 0
                               or rec["step"] == cfg.steps):
            print(f"step {rec['step']:5d}  total {rec['total']:.5f}  alpha {rec['alpha']:.4f}")

    res = train(cfg, on_step=progress)
    print(f"checkpoint: {res.checkpoint}")
    return EXIT_OK


def _check_against_config(net_cfg: NetConfig, config_path) -> None:
    if config_path is None:
        return
    from .train import RunConfig

    want = NetConfig.preset(RunConfig.load(config_path).preset).to_dict()
    have = net_cfg.to_dict()
    for key in want:
        if want[key] != have.get(key):
            raise CheckpointMismatchError(
                f"checkpoint {key}={have.get(key)!r} but config preset needs {want[key]!r}")


def _ir_gray(ir: Tensor) -> Tensor:
    if ir.shape[1] == 1:
        return ir
    d = ir.data
    return Tensor((0.299 * d[:, 0:1] + 0.587 * d[:, 1:2] + 0.114 * d[:, 2:3]).astype(np.float32))


def _fuse(net: CAWMNet, vi: Tensor, ir: Tensor) -> Tensor:
    if vi.shape[1] != 3:
        raise UnsupportedFormatError("visible image must be RGB")
    ir = _ir_gray(ir)
    if vi.shape[2:] != ir.shape[2:]:
        raise UsageError(f"visible {vi.shape[2:]} and infrared {ir.shape[2:]} sizes differ")
    with no_grad():
        return net(vi, ir)


def cmd_fuse(args) -> int:
    net, _ = load_model(args.ckpt)
    _check_against_config(net.cfg, args.config)
    fused = _fuse(net, load_png(args.vi), load_png(args.ir))
    save_png(fused, args.out)
    print(f"fused image written to {args.out}")
    return EXIT_OK


def build_report(rows: list[tuple[str, MetricReport]]) -> dict:
    pairs = [{"name": name, **m.to_dict()} for name, m in rows]
    keys = ("ssim", "q_mi", "q_abf")
    means = {k: float(np.mean([p[k] for p in pairs])) for k in keys}
    return {"pairs": pairs, "means": means}


def cmd_eval(args) -> int:
    if (args.ckpt is None) == (args.fused_dir is None):
        raise UsageError("eval needs exactly one of --ckpt or --fused-dir")
    triples = load_triples(args.data)
    net = None
    if args.ckpt is not None:
        net, _ = load_model(args.ckpt)
        _check_against_config(net.cfg, args.config)
    rows = []
    for t in triples:
        if net is not None:
            fused = _fuse(net, t.degraded_vi, t.ir)
        else:
            path = Path(args.fused_dir) / f"{t.name}.png"
            if not path.is_file():
                raise FileNotFoundError(f"fused image {path} is missing")
            fused = load_png(path)
        rows.append((t.name, evaluate(fused, t.clean_vi, t.ir)))
    report = build_report(rows)
    Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    m = report["means"]
    print(f"{len(rows)} pairs  ssim {m['ssim']:.4f}  q_mi {m['q_mi']:.4f}  q_abf {m['q_abf']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import run_gradcheck

    results = run_gradcheck(seed=args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        extra = f"  skipped-kinks={sum(r.kinks.values())}" if r.kinks else ""
        extra += f"  starved={','.join(r.starved)}" if r.starved else ""
        print(f"{status}  {r.name:24s} worst rel err {r.worst:.2e}{extra}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_selftest(args) -> int:
    from .checks import run_selftest

    results = run_selftest(seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:16s} {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cawm", description="Weather-robust visible/infrared fusion toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write synthetic clean/degraded/IR triples")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--kinds", nargs="+", choices=KINDS, default=["haze", "rain"])
    s.add_argument("--severity", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=32)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train from a JSON run config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", default=None, help="override the config's out_dir")
    s.add_argument("--print-every", type=int, default=25)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("fuse", help="fuse one visible/infrared pair")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--vi", required=True)
    s.add_argument("--ir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", default=None, help="require the checkpoint to match this config")
    s.set_defaults(fn=cmd_fuse)

    s = sub.add_parser("eval", help="score a dataset directory")
    s.add_argument("--ckpt", default=None)
    s.add_argument("--fused-dir", default=None, help="score precomputed <name>.png images")
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--config", default=None, help="require the checkpoint to match this config")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("selftest", help="invariant suites")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_selftest)
    return p


def _check_paths(args) -> None:
    for attr in ("config", "ckpt", "vi", "ir"):
        value = getattr(args, attr, None)
        if value is not None and not Path(value).is_file():
            raise FileNotFoundError(f"--{attr.replace('_', '-')} {value}: no such file")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _check_paths(args)
        return args.fn(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_MISSING
    except ConfigFileError as exc:
        _err(str(exc) + (f" [key: {exc.key}]" if exc.key else ""))
        return EXIT_CONFIG
    except CheckpointMismatchError as exc:
        _err(f"checkpoint/config mismatch: {exc}")
        return EXIT_MISMATCH
    except CorruptCheckpointError as exc:
        _err(f"corrupt checkpoint: {exc}")
        return EXIT_CORRUPT
    except UnsupportedFormatError as exc:
        _err(str(exc))
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
