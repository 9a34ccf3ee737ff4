"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 invalid configuration or input file,
3 runtime or numerical failure. Failures print one ``tlsnet: <kind>: <message>``
line to stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import tempfile

from . import __version__, checkpoint, dataset, rng
from .container import ContainerError
from .errors import ConfigError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("tlsnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@contextlib.contextmanager
def _atomic_output(path):
    """Yield a temporary path next to ``path``; rename it into place only on success."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _add_field_flags(p):
    p.add_argument("--field", choices=["zero", "sine", "pulse", "random", "linear"], default="sine")
    p.add_argument("--amp", type=float, default=1.0)
    p.add_argument("--freq", type=float, default=0.5)
    p.add_argument("--a1", type=float, default=0.0)
    p.add_argument("--a2", type=float, default=0.0)
    p.add_argument("--K", type=int, default=4, help="envelope components (random field)")
    p.add_argument("--dt", type=float, default=0.025)
    p.add_argument("--points", type=int, default=10100)


def _field_from_args(args):
    from .fields import Family, FieldSpec

    seed = args.seed if args.seed is not None else 0
    try:
        return FieldSpec(Family(args.field), args.amp, args.freq, args.a1, args.a2,
                         envelope_seed=rng.derive_seed(seed, rng.ENVELOPE), envelope_components=args.K,
                         envelope_duration=args.dt * args.points)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _grid_from_args(args):
    from .physics import TimeGrid

    try:
        return TimeGrid(0.0, args.dt, args.points)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="master seed; every random stream is derived from it per purpose")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="BLAS threads (env TLS_THREADS)")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = _Parser(prog="tlsnet", description="Two-level atom solver and seq2seq dipole forecaster.")
    p.add_argument("--version", action="store_true", help="print versions and exit")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="solve one trajectory, write CSV")
    _add_field_flags(s)
    s.add_argument("--out", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="generate a training dataset container")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", required=True)
    s.add_argument("--model-config", required=True)
    s.add_argument("--train-config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--history", help="CSV path for the per-epoch history (default: <out>.history.csv)")

    s = sub.add_parser("eval", parents=[common], help="loss matrix over a test grid")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--grid-config", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("rollout", parents=[common], help="roll a model out on one field, write comparison CSV")
    s.add_argument("--checkpoint", required=True)
    _add_field_flags(s)
    s.add_argument("--horizon", type=int, default=10000)
    s.add_argument("--out", required=True)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    s.add_argument("--hidden", type=int, default=8)
    s.add_argument("--length", type=int, default=10)

    s = sub.add_parser("convergence", parents=[common], help="splitting order self-test")
    s.add_argument("--field", choices=["zero", "sine", "pulse"], default="sine")
    s.add_argument("--amp", type=float, default=1.0)
    s.add_argument("--freq", type=float, default=0.5)
    s.add_argument("--first-order", action="store_true", help="debug: use first-order (Lie) stepping")
    return p


def _cmd_simulate(args) -> int:
    from .physics import TwoLevelParams, solve_trajectory

    field, grid = _field_from_args(args), _grid_from_args(args)
    traj = solve_trajectory(TwoLevelParams(), field, grid)
    with _atomic_output(args.out) as tmp:
        traj.write_csv(tmp)
    log.info("wrote %d rows to %s (max norm error %.3g)", grid.n_points, args.out, traj.norm_error())
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    from .config import load_section

    overrides = {"seed": args.seed} if args.seed is not None else None
    cfg = load_section(args.config, "dataset", overrides)
    ds = dataset.build_dataset(cfg)
    dataset.write_dataset(ds, args.out)
    log.info("wrote %d train / %d val windows to %s", len(ds.train), len(ds.val), args.out)
    return EXIT_OK


def _cmd_train(args) -> int:
    from .config import load_section
    from .training import train

    overrides = {"init_seed": args.seed, "shuffle_seed": args.seed} if args.seed is not None else None
    model_cfg = load_section(args.model_config, "model")
    train_cfg = load_section(args.train_config, "train", overrides)
    ds = dataset.read_dataset(args.data)
    if (model_cfg.encoder_length, model_cfg.decoder_length) != (ds.config.encoder_length, ds.config.decoder_length):
        raise ConfigError("model sequence lengths do not match the dataset windows")
    params, history = train(ds, model_cfg, train_cfg, checkpoint_path=args.out)
    with _atomic_output(args.history or args.out + ".history.csv") as tmp:
        history.write_csv(tmp)
    if history.records:
        last = history.records[-1]
        log.info("epoch %d: train %.4g val %.4g", last.epoch, last.train_rmse, last.val_rmse)
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .config import load_section
    from .evaluation import evaluate_grid, export_matrix_csv
    from .model import Seq2Seq

    overrides = {"envelope_seed": args.seed} if args.seed is not None else None
    grid_cfg = load_section(args.grid_config, "grid", overrides)
    model_cfg, params = checkpoint.read_checkpoint(args.checkpoint)
    if grid_cfg.n_points < model_cfg.encoder_length + grid_cfg.horizon:
        raise ConfigError("grid too short for seed plus horizon")
    matrix = evaluate_grid(Seq2Seq(model_cfg, params), grid_cfg, metadata={"checkpoint": os.path.abspath(args.checkpoint)})
    with _atomic_output(args.out) as tmp:
        export_matrix_csv(matrix, tmp)
    for e in matrix.errors:
        print(f"tlsnet: cell-error: {e}", file=sys.stderr)
    return EXIT_OK


def _cmd_rollout(args) -> int:
    from .evaluation import evaluate_cell, export_comparison_csv
    from .fields import sample_field
    from .model import Seq2Seq
    from .physics import TwoLevelParams

    field, grid = _field_from_args(args), _grid_from_args(args)
    model_cfg, params = checkpoint.read_checkpoint(args.checkpoint)
    if grid.n_points < model_cfg.encoder_length + args.horizon:
        raise ConfigError("grid too short for seed plus horizon")
    res = evaluate_cell(Seq2Seq(model_cfg, params), field, grid, args.horizon, TwoLevelParams())
    with _atomic_output(args.out) as tmp:
        export_comparison_csv(res.pred, res.truth, sample_field(field, grid), grid, tmp, model_cfg.encoder_length)
    print(f"normalized_test_loss={res.loss!r}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .verify import GRADCHECK_TOL, gradcheck

    ok = True
    for seed in args.seeds:
        r = gradcheck(seed, args.hidden, args.length)
        ok &= r.passed
        print(f"seed={seed} checked={r.checked} max_rel_error={r.max_rel_error:.3e} worst={r.worst} "
              f"feedback_components={r.feedback_components} detached_max_rel_error={r.detached_max_rel_error:.3e} "
              f"{'PASS' if r.passed else 'FAIL'}")
    print(f"gradcheck {'PASS' if ok else 'FAIL'} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


def _cmd_convergence(args) -> int:
    from .fields import Family, FieldSpec
    from .verify import self_test_convergence

    field = FieldSpec(Family(args.field), args.amp, args.freq)
    rep = self_test_convergence(field, scheme="lie" if args.first_order else "strang")
    for dt, err in zip(rep["dts"], rep["errors"]):
        print(f"dt={dt:g} max_dipole_error={err:.6e}")
    orders = ", ".join(f"{o:.4f}" for o in rep["orders"])
    status = "PASS (exact)" if rep["exact"] else ("PASS" if rep["passed"] else "FAIL")
    print(f"scheme={rep['scheme']} observed_orders=[{orders}] {status}")
    return EXIT_OK if rep["passed"] else EXIT_RUNTIME


COMMANDS = {
    "simulate": _cmd_simulate,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "rollout": _cmd_rollout,
    "gradcheck": _cmd_gradcheck,
    "convergence": _cmd_convergence,
}


def _thread_count(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("TLS_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"TLS_THREADS must be an integer, got {env!r}") from exc
    return None


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            raise UsageError("no command given")
        args = parser.parse_args(argv)
        if args.version:
            print(f"tlsnet {__version__} (dataset format {dataset.VERSION}, checkpoint format {checkpoint.VERSION})")
            return EXIT_OK
        if args.command is None:
            raise UsageError("no command given")
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"tlsnet: usage-error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _thread_count(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](args)
    except (ConfigError, ContainerError) as exc:
        print(f"tlsnet: config-error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ValueError, OSError, RuntimeError) as exc:
        print(f"tlsnet: runtime-error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(parse_and_dispatch())
