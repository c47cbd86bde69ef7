"""``phytaylor`` command line: one binary, one subcommand per workflow.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import errors
from .datagen import (
    PENDULUM_KNOWLEDGE,
    PENDULUM_STATE,
    VEHICLE_STATE,
    PendulumParams,
    VehicleParams,
    dataset_trajectories,
    pairs_dataset,
    pendulum_knowledge,
    random_vehicle_starts,
    simulate_pendulums,
    simulate_vehicle,
    split_tags,
    vehicle_knowledge,
)
from .editing import ACTIVATIONS, LayerPlan, parameter_counts
from .io import (
    ModelConfig,
    RunReport,
    dumps_report,
    load_csv,
    load_model_config,
    load_safety_config,
    load_weights,
    save_csv,
    save_model_config,
    save_weights,
    write_history,
    write_table,
)
from .monomial import (
    basis_len,
    build_basis,
    cascade_complexity_closed_form,
    cascade_complexity_difference,
    cascade_weight_count,
    evaluate,
)
from .network import compliance_deviation, predict
from .selfcorrect import CommandBox, CorrectionProblem, correct_commands, target_metrics
from .train import TrainConfig, rollout_error, train_model

log = logging.getLogger("phytaylor")

OK, USAGE, DATA, NUMERIC = 0, 2, 3, 4
COMPLIANCE_TOL = 1e-9
LOG_ENV = "PHYTAYLOR_LOG_LEVEL"

EXIT_CODES = (
    ((errors.ParseError, errors.DimensionMismatch, errors.HashMismatch,
      errors.VersionUnknown, OSError), DATA),
    ((errors.NonFiniteValue, errors.TrainingDiverged, errors.NoRealSolution,
      errors.DegenerateQuadratic, errors.Unrevisable, errors.ModelNotPolynomial,
      errors.ConditionViolated, errors.SingularDNR), NUMERIC),
    ((errors.PhyTaylorError,), USAGE),
)


class UsageError(Exception):
    pass


# ------------------------------------------------------------ flag parsing

def floats(text: str, count: int | None = None, flag: str = "value") -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise UsageError(f"{flag}: expected {count} numbers, got {len(vals)}")
    return vals


def ints(text: str, flag: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from None


def parse_plan(text: str) -> list[LayerPlan]:
    """``out:order:activation`` entries, comma separated."""
    plan = []
    for item in text.split(","):
        parts = item.split(":")
        if len(parts) not in (2, 3):
            raise UsageError(f"--plan entry {item!r} is not out:order[:activation]")
        act = parts[2] if len(parts) == 3 else "tanh"
        if act not in ACTIVATIONS:
            raise UsageError(f"--plan activation {act!r} is not one of {ACTIVATIONS}")
        plan.append(LayerPlan(int(parts[0]), int(parts[1]), act))
    return plan


def delimiter(args) -> str:
    return "\t" if args.format == "tsv" else ","


def emit(args, header, rows) -> None:
    write_table(sys.stdout, header, rows, delimiter(args))


def _write_report(path, report) -> None:
    if path:
        Path(path).write_text(dumps_report(report))


# --------------------------------------------------------------- commands

def cmd_augment(args) -> int:
    basis = build_basis(args.dim, args.order)
    x = floats(args.eval, args.dim, "--eval") if args.eval is not None else None
    values = evaluate(basis, np.array(x)) if x is not None else None
    header = ["index", "exponents", "monomial"] + (["value"] if x is not None else [])
    rows = []
    for k, term in enumerate(basis.terms):
        row = [k, " ".join(map(str, term.exponents)), term.label()]
        if values is not None:
            row.append(float(values[k]))
        rows.append(row)
    emit(args, header, rows)
    return OK


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.system == "pendulum":
        params = PendulumParams(period=args.period, steps=args.steps)
        lo, hi = floats(args.theta_range, 2, "--theta-range")
        traj = simulate_pendulums(params, args.n_traj, (lo, hi), args.seed,
                                  (-args.velocity, args.velocity))
        names = PENDULUM_STATE
        flags = tuple(f for f in args.knowledge.split(",") if f) if args.knowledge else ()
        spec = pendulum_knowledge(args.order, params.period, flags)
        plan = parse_plan(args.plan or f"6:{args.order}:identity")
        record = {"system": "pendulum", **asdict(params), "theta_range": [lo, hi],
                  "velocity": args.velocity, "knowledge": list(flags)}
    else:
        params = VehicleParams(T=args.period, noise_std=args.noise_std)
        x0 = random_vehicle_starts(args.n_traj, args.seed)
        traj = simulate_vehicle(params, x0, args.steps, args.seed)
        names = VEHICLE_STATE
        spec = vehicle_knowledge(args.order, params.T)
        plan = parse_plan(args.plan or f"7:{args.order}:tanh,6:{args.order}:tanh")
        record = {"system": "vehicle", **params.to_dict()}
    data = pairs_dataset(traj, split_tags(args.n_traj, rng))
    save_csv(args.out, data, names, [n + "_next" for n in names], delimiter(args))
    record.update(seed=args.seed, n_traj=args.n_traj, steps=args.steps, order=args.order)
    Path(str(args.out) + ".params.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    if args.config_out:
        save_model_config(ModelConfig(spec, tuple(plan)), args.config_out)
    log.info("wrote %d pairs to %s", len(data), args.out)
    return OK


def _compliance(model, inputs: np.ndarray, probes: int, rng) -> dict:
    known, _ = model.known_matrix()
    pick = inputs[rng.choice(len(inputs), size=min(probes, len(inputs)), replace=False)]
    return {"probes": int(len(pick)), "known_positions": int(known.sum()),
            "max_deviation": compliance_deviation(model, pick)}


def cmd_train(args) -> int:
    cfg = load_model_config(args.model)
    data = load_csv(args.data, cfg.input_dim, cfg.spec.out_dim)
    model = cfg.build(seed=args.seed)
    tc = TrainConfig(optimizer=args.optimizer, learning_rate=args.lr, batch_size=args.batch_size,
                     epochs=args.epochs, seed=args.seed, loss=args.loss)
    history = train_model(model, data, tc)
    save_weights(model, cfg, args.out)
    if args.history:
        write_history(args.history, history, delimiter(args))
    report = RunReport(cfg.sha256(), args.seed, history,
                       _compliance(model, data.inputs, args.probes, np.random.default_rng(args.seed)))
    trainable, frozen = parameter_counts(model)
    report.extra.update(trainable_weights=trainable, frozen_weights=frozen, config=asdict(tc))
    if args.horizon:
        errs = {}
        for split in ("val", "test"):
            if np.any(data.split == split):
                errs[split] = rollout_error(model, dataset_trajectories(data, split), args.horizon)
        report.rollout_errors = errs
    _write_report(args.report, report)
    emit(args, ("epoch", "train_loss", "val_loss"), history.rows()[-1:])
    return OK


def _load_model(args):
    cfg = load_model_config(args.model)
    return cfg, load_weights(args.weights, cfg)


def cmd_predict(args) -> int:
    cfg, model = _load_model(args)
    try:
        data = load_csv(args.data, cfg.input_dim, 0)
    except errors.DimensionMismatch:
        data = load_csv(args.data, cfg.input_dim, cfg.spec.out_dim)
    y = predict(model, data.inputs)
    emit(args, [f"y{i + 1}" for i in range(y.shape[1])], [list(map(float, row)) for row in y])
    return OK


def cmd_rollout(args) -> int:
    cfg, model = _load_model(args)
    data = load_csv(args.data, cfg.input_dim, cfg.spec.out_dim)
    traj = dataset_trajectories(data, args.split)
    err = rollout_error(model, traj, args.horizon, start=args.start, squared=args.squared)
    per = [rollout_error(model, t[None], args.horizon, start=args.start, squared=args.squared)
           for t in traj]
    emit(args, ("trajectory", "error"), [*((i, float(e)) for i, e in enumerate(per)), ("mean", float(err))])
    _write_report(args.report, RunReport(cfg.sha256(), args.seed,
                                         rollout_errors={"mean": err, "per_trajectory": per},
                                         extra={"horizon": args.horizon, "start": args.start,
                                                "squared": args.squared}))
    return OK if np.isfinite(err) else NUMERIC


def cmd_verify(args) -> int:
    cfg, model = _load_model(args)
    rng = np.random.default_rng(args.seed)
    lo, hi = floats(args.range, 2, "--range")
    x = rng.uniform(lo, hi, size=(args.probes, cfg.input_dim))
    known, _ = model.known_matrix()
    dev = compliance_deviation(model, x)
    ok = dev <= COMPLIANCE_TOL
    emit(args, ("probes", "known_positions", "max_deviation", "ok"),
         [(args.probes, int(known.sum()), float(dev), "yes" if ok else "no")])
    if not known.any():
        print("note: 0 known positions, compliance holds vacuously", file=sys.stderr)
    _write_report(args.report, RunReport(cfg.sha256(), args.seed, compliance={
        "probes": args.probes, "known_positions": int(known.sum()), "max_deviation": dev}))
    return OK if ok else NUMERIC


def cmd_correct(args) -> int:
    cfg = load_safety_config(args.safety)
    if len(cfg.quadratics) != 2:
        raise errors.UnsupportedDimension(f"need 2 safety relations, config has {len(cfg.quadratics)}")
    if args.box:
        t0, t1, g0, g1 = floats(args.box, 4, "--box")
        box = CommandBox((t0, g0), (t1, g1))
    elif cfg.box is not None:
        box = cfg.box
    else:
        raise UsageError("no command box: pass --box or add a [box] block to the safety config")
    problem = CorrectionProblem(cfg.quadratics, tuple(floats(args.bounds, 2, "--bounds")), box)
    u = np.array(floats(args.u, 2, "--u"))
    c_hat = target_metrics(problem, u)
    fixed = correct_commands(problem, u)
    res = [abs(float(q(fixed)) - c) for q, c in zip(problem.quadratics, c_hat)]
    corrected = "no" if np.array_equal(fixed, u) else "yes"
    emit(args, ("u1", "u2", "residual1", "residual2", "corrected"),
         [(float(fixed[0]), float(fixed[1]), res[0], res[1], corrected)])
    return OK


def cmd_complexity(args) -> int:
    orders = ints(args.orders, "--orders") if args.orders else [args.r]
    dims = ints(args.dims, "--dims") if args.dims else []
    n, r = args.n, args.r
    L = basis_len(n, r)
    cascade = [basis_len(d, o) for d, o in zip([n, *dims], orders)]
    diff = cascade_complexity_difference(n, r, dims, orders)
    closed = cascade_complexity_closed_form(n, r, dims, orders)
    rows = [
        ("single_basis_len", L),
        ("cascade_basis_lens", " ".join(map(str, cascade))),
        ("cascade_basis_sum", sum(cascade)),
        ("difference_direct", diff),
        ("difference_closed_form", closed),
        ("single_weights", args.out * (L - 1)),
        ("cascade_weights", cascade_weight_count(n, [*dims, args.out], orders)),
        # dense n -> (L-1) -> out versus one PhN over the L-1 monomials
        ("dense_reference_delta", (n + 1) * (L - 1)),
    ]
    emit(args, ("quantity", "value"), rows)
    return OK if diff == closed else NUMERIC


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--format", choices=("csv", "tsv"), default="csv",
                        help="delimiter for tabular output (default csv)")
    parser = argparse.ArgumentParser(prog="phytaylor", allow_abbrev=False,
                                     description="Physics-edited Taylor networks.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_,
                           allow_abbrev=False)
        p.set_defaults(func=func)
        return p

    p = add("augment", cmd_augment, "print the monomial basis m(x, r)")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--eval", metavar="X1,X2,...", help="evaluate the basis at this point")

    p = add("simulate", cmd_simulate, "generate a pendulum or vehicle pairs CSV")
    p.add_argument("system", choices=("pendulum", "vehicle"))
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-traj", type=int, default=20)
    p.add_argument("--steps", type=int, default=50, help="samples per trajectory")
    p.add_argument("--period", type=float, default=None,
                   help="sampling period (pendulum 0.01, vehicle 0.1)")
    p.add_argument("--theta-range", default="-1,1", help="pendulum initial angle range")
    p.add_argument("--velocity", type=float, default=1.0,
                   help="pendulum initial velocities are uniform in [-v, v]")
    p.add_argument("--noise-std", type=float, default=0.0, help="vehicle observation noise")
    p.add_argument("--order", type=int, default=2, help="order of the emitted knowledge spec")
    p.add_argument("--knowledge", default=",".join(PENDULUM_KNOWLEDGE),
                   help="pendulum knowledge flags (subset of law,period,topology,force)")
    p.add_argument("--plan", help="layer plan for --config-out, e.g. 7:2:tanh,6:2:tanh")
    p.add_argument("--config-out", type=Path, help="also write a model config with the knowledge spec")

    p = add("train", cmd_train, "train a model config on a pairs CSV")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="weights file to write")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=200)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--loss", choices=("mse", "mae"), default="mse")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", type=Path, help="per-epoch loss table")
    p.add_argument("--report", type=Path, help="JSON run report")
    p.add_argument("--probes", type=int, default=20, help="inputs used for the compliance check")
    p.add_argument("--horizon", type=int, default=0,
                   help="also score val/test rollouts over this many steps")

    for name, func, help_ in (("predict", cmd_predict, "one-step predictions for a CSV"),
                              ("rollout", cmd_rollout, "closed-loop rollout error on trajectories"),
                              ("verify", cmd_verify, "check Jacobian compliance with the knowledge")):
        p = add(name, func, help_)
        p.add_argument("--model", required=True, type=Path)
        p.add_argument("--weights", required=True, type=Path)
        if name != "verify":
            p.add_argument("--data", required=True, type=Path)
        if name == "rollout":
            p.add_argument("--horizon", type=int, required=True)
            p.add_argument("--start", type=int, default=0)
            p.add_argument("--split", choices=("train", "val", "test"))
            p.add_argument("--squared", action="store_true", help="squared per-step error")
        if name != "predict":
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--report", type=Path)
        if name == "verify":
            p.add_argument("--probes", type=int, default=50)
            p.add_argument("--range", default="-1,1", help="probe inputs are uniform in this range")

    p = add("correct", cmd_correct, "correct an unsafe command pair")
    p.add_argument("--safety", required=True, type=Path)
    p.add_argument("--bounds", required=True, metavar="C1,C2")
    p.add_argument("--box", metavar="UMIN1,UMAX1,UMIN2,UMAX2")
    p.add_argument("--u", required=True, metavar="U1,U2")

    p = add("complexity", cmd_complexity, "single versus cascade size accounting")
    p.add_argument("--n", type=int, required=True, help="input dimension")
    p.add_argument("--r", type=int, required=True, help="overall order")
    p.add_argument("--orders", help="per-layer orders whose product is r, e.g. 2,2")
    p.add_argument("--dims", help="intermediate output dims, one fewer than orders")
    p.add_argument("--out", type=int, default=1, help="terminal output dimension")
    return parser


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "period", "absent") is None:
        args.period = 0.01 if args.system == "pendulum" else 0.1
    try:
        return args.func(args)
    except BrokenPipeError:
        # reader closed stdout early (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return OK
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"phytaylor {args.command}: error: {exc}", file=sys.stderr)
        return USAGE
    except Exception as exc:
        for kinds, code in EXIT_CODES:
            if isinstance(exc, kinds):
                print(f"phytaylor {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
