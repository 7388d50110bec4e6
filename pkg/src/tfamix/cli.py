"""Command-line surface: fit, select, simulate, eval.

Exit codes: 0 success, 2 the run finished but hit the iteration cap
(outputs are still written), 1 any error, including bad usage. Worker
threads are capped by the MTFAD_THREADS environment variable; given the
same inputs and seed, outputs are byte-identical across runs and thread
counts.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio, ecm, initialization, selection, simulate
from .model import FitConfig, model_from_json, model_to_json

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class CliError(Exception):
    """User-facing error; message printed to stderr, exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for
    # non-convergence here, so remap to 1
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"{flag} expects an integer or comma-separated integers")


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"{flag} expects a number or comma-separated numbers")


def _load_config(path, seed) -> FitConfig:
    cfg = {}
    if path is not None:
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}")
    if seed is not None:
        cfg["seed"] = seed
    try:
        return FitConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad config: {exc}")


def _check_q_bound(q_vec, p: int) -> None:
    bound = selection.max_factors(p)
    for q in q_vec:
        if not 1 <= q <= bound:
            raise CliError(
                f"q={q} is not admissible for p={p}; the maximum number of "
                f"factors is {bound}"
            )


def _cmd_fit(args) -> int:
    config = _load_config(args.config, args.seed)
    t0 = time.perf_counter()
    try:
        data = dataio.read_csv(args.data)
    except (OSError, dataio.ParseError) as exc:
        raise CliError(str(exc))
    t_read = time.perf_counter() - t0
    if args.k < 1:
        raise CliError("--k must be at least 1")
    q_list = _parse_int_list(args.q, "--q")
    q_vec = tuple(q_list) * args.k if len(q_list) == 1 else tuple(q_list)
    if len(q_vec) != args.k:
        raise CliError(f"--q needs 1 or {args.k} values, got {len(q_list)}")
    _check_q_bound(q_vec, data.p)

    t0 = time.perf_counter()
    try:
        model = initialization.em_em(data, args.k, q_vec, config)
    except ecm.EcmError as exc:
        raise CliError(f"fit failed: {exc}")
    result = ecm.make_result(data, model)
    t_fit = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    model_path = out / "model.json"
    assign_path = out / "assignments.csv"
    dataio.atomic_write_text(model_path, model_to_json(model) + "\n")
    dataio.write_assignments_csv(assign_path, result)
    manifest = dataio.RunManifest(
        command="fit", config=config.to_dict(), seed=config.seed
    )
    manifest.add_input(args.data)
    manifest.outputs = [model_path, assign_path]
    manifest.timings = {"read": t_read, "fit": t_fit, "write": time.perf_counter() - t0}
    manifest.write(out / "manifest.json")
    print(
        f"fit: K={args.k} q={','.join(map(str, q_vec))} "
        f"loglik={model.loglik:.6f} converged={model.converged} "
        f"iterations={model.iterations}"
    )
    return EXIT_OK if model.converged else EXIT_NOT_CONVERGED


def _cmd_select(args) -> int:
    config = _load_config(args.config, args.seed)
    t0 = time.perf_counter()
    try:
        data = dataio.read_csv(args.data)
    except (OSError, dataio.ParseError) as exc:
        raise CliError(str(exc))
    t_read = time.perf_counter() - t0
    if args.k_max < 1:
        raise CliError("--k-max must be at least 1")
    mode = "varied" if args.varied_q else "uniform"
    t0 = time.perf_counter()
    try:
        table = selection.select(
            data,
            range(1, args.k_max + 1),
            mode=mode,
            config=config,
            q_max_override=args.q_max,
        )
    except (ecm.EcmError, ValueError) as exc:
        raise CliError(f"selection failed: {exc}")
    t_select = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    table_path = out / "selection.csv"
    best_path = out / "best_model.json"
    dataio.atomic_write_text(table_path, selection.table_to_csv(table))
    dataio.atomic_write_text(out / "selection.json", selection.table_to_json(table) + "\n")
    outputs = [table_path, out / "selection.json"]
    if table.best_result is not None:
        dataio.atomic_write_text(best_path, model_to_json(table.best_result.model) + "\n")
        outputs.append(best_path)
    manifest = dataio.RunManifest(
        command="select", config=config.to_dict(), seed=config.seed
    )
    manifest.add_input(args.data)
    manifest.outputs = outputs
    manifest.timings = {
        "read": t_read,
        "select": t_select,
        "write": time.perf_counter() - t0,
    }
    manifest.write(out / "manifest.json")
    best = table.best
    print(
        f"select: best K={best.K} q={'-'.join(map(str, best.q_vec))} "
        f"BIC={best.bic:.4f} status={best.status}"
    )
    return EXIT_OK if best.status == selection.STATUS_CONVERGED else EXIT_NOT_CONVERGED


def _cmd_simulate(args) -> int:
    if args.k < 1:
        raise CliError("--k must be at least 1")
    q_list = _parse_int_list(args.q, "--q")
    q_vec = tuple(q_list) * args.k if len(q_list) == 1 else tuple(q_list)
    dof_list = _parse_float_list(args.dof, "--dof")
    dof_vec = tuple(dof_list) * args.k if len(dof_list) == 1 else tuple(dof_list)
    if args.weights is not None:
        weights = tuple(_parse_float_list(args.weights, "--weights"))
    else:
        # protocol draw: absolute standard normals scaled to sum 1
        rng = np.random.default_rng(np.random.SeedSequence([args.seed & (2**63 - 1), 7]))
        raw = np.abs(rng.standard_normal(args.k))
        weights = tuple(raw / raw.sum())
    t0 = time.perf_counter()
    try:
        spec = simulate.SimSpec(
            n=args.n,
            p=args.p,
            n_components=args.k,
            q_vec=q_vec,
            dof_vec=dof_vec,
            weights=weights,
            target_overlap=args.overlap,
            seed=args.seed,
        )
        if args.overlap is not None:
            spec = simulate.calibrate_overlap(spec, mc_samples=args.mc_samples)
        data = simulate.gen_tmix(spec)
        truth = simulate.draw_model(spec)
    except ValueError as exc:
        raise CliError(str(exc))
    t_gen = time.perf_counter() - t0

    out = Path(args.out)
    t0 = time.perf_counter()
    dataio.write_dataset_csv(out, data)
    truth_path = out.with_name(out.stem + "_model.json")
    dataio.atomic_write_text(truth_path, model_to_json(truth) + "\n")
    manifest = dataio.RunManifest(
        command="simulate",
        config={
            "n": args.n,
            "p": args.p,
            "k": args.k,
            "q": list(q_vec),
            "dof": list(dof_vec),
            "weights": list(weights),
            "overlap": args.overlap,
            "mean_scale": spec.mean_scale,
        },
        seed=args.seed,
    )
    manifest.outputs = [out, truth_path]
    manifest.timings = {"generate": t_gen, "write": time.perf_counter() - t0}
    manifest.write(out.with_name(out.stem + "_manifest.json"))
    print(f"simulate: wrote {data.n}x{data.p} dataset to {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    try:
        fitted = model_from_json(Path(args.fitted).read_text())
        assigned = dataio.read_assignments_csv(args.assignments)
        truth_data = dataio.read_csv(args.truth_labels)
    except (OSError, dataio.ParseError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(str(exc))
    if truth_data.labels is None:
        if truth_data.p == 1:
            labels = truth_data.y[:, 0].astype(int)
        else:
            raise CliError(f"{args.truth_labels}: no 'label' column found")
    else:
        labels = truth_data.labels
    if labels.shape[0] != assigned.shape[0]:
        raise CliError(
            f"assignments ({assigned.shape[0]} rows) and truth labels "
            f"({labels.shape[0]} rows) differ in length"
        )
    report: dict = {"ari": simulate.ari(labels, assigned)}
    if args.truth_model is not None:
        try:
            truth_model = model_from_json(Path(args.truth_model).read_text())
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise CliError(str(exc))
        if truth_model.n_components != fitted.n_components:
            raise CliError(
                f"component counts differ: truth {truth_model.n_components}, "
                f"fitted {fitted.n_components}"
            )
        perm = simulate.match_components(truth_model, fitted)
        dist = simulate.rel_distances(truth_model, fitted, perm)
        report.update(
            {
                "matching": perm.tolist(),
                "d_mu": dist.d_mu.tolist(),
                "d_lambda": dist.d_lambda.tolist(),
                "d_psi": dist.d_psi.tolist(),
                "absolute_distance_flags": list(dist.absolute),
            }
        )
    text = json.dumps(report, indent=2)
    print(text)
    out = Path(args.out) if args.out else Path(args.assignments).parent / "evaluation.json"
    dataio.atomic_write_text(out, text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tfamix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a mixture with fixed K and factor counts")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--k", type=int, required=True)
    p_fit.add_argument("--q", required=True, help="q or q1,q2,...,qK")
    p_fit.add_argument("--config", default=None)
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=_cmd_fit)

    p_sel = sub.add_parser("select", help="BIC grid search over K and factor counts")
    p_sel.add_argument("--data", required=True)
    p_sel.add_argument("--k-max", type=int, required=True)
    p_sel.add_argument("--varied-q", action="store_true")
    p_sel.add_argument("--q-max", type=int, default=None)
    p_sel.add_argument("--config", default=None)
    p_sel.add_argument("--seed", type=int, default=None)
    p_sel.add_argument("--out", required=True)
    p_sel.set_defaults(func=_cmd_select)

    p_sim = sub.add_parser("simulate", help="generate a labeled t-mixture dataset")
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--p", type=int, required=True)
    p_sim.add_argument("--k", type=int, required=True)
    p_sim.add_argument("--q", required=True, help="q or q1,...,qK")
    p_sim.add_argument("--dof", required=True, help="nu or nu1,...,nuK")
    p_sim.add_argument("--overlap", type=float, default=None)
    p_sim.add_argument("--mc-samples", type=int, default=20000)
    p_sim.add_argument("--weights", default=None, help="w1,...,wK summing to 1")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output CSV path")
    p_sim.set_defaults(func=_cmd_simulate)

    p_eval = sub.add_parser("eval", help="score a fit against ground truth")
    p_eval.add_argument("--fitted", required=True, help="model JSON")
    p_eval.add_argument("--assignments", required=True, help="assignments CSV")
    p_eval.add_argument("--truth-labels", required=True, help="CSV with a label column")
    p_eval.add_argument("--truth-model", default=None, help="truth model JSON")
    p_eval.add_argument("--out", default=None, help="report JSON path")
    p_eval.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
