"""Command-line front end.

Commands: generate, train, predict, cv, sweep, ablate. Exit status is 0 on
success, 1 on a runtime, data or training failure and 2 on a usage or
parameter error. Set ``MVLDL_LOG`` (e.g. ``INFO`` or ``DEBUG``) for logging.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, experiments, metrics
from .dataset import SyntheticSpec, generate_synthetic, load_dataset, mask_labels, save_dataset
from .errors import MvldlError, ParameterError
from .graph import dump_similarity
from .model import Hyperparams, load_model, predict, save_model, train

log = logging.getLogger("mvldl")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_hyper_flags(p):
    d = Hyperparams()
    g = p.add_argument_group("model")
    g.add_argument("--lambda", dest="lam", type=float, default=d.lam, help="fit weight (default %(default)s)")
    g.add_argument("--mu1", type=float, default=d.mu1, help="feature reconstruction weight")
    g.add_argument("--mu2", type=float, default=d.mu2, help="distribution reconstruction weight")
    g.add_argument("--sigma", type=float, default=d.sigma, help="similarity consistency weight")
    g.add_argument("--gamma", type=float, default=d.gamma, help="distribution consistency weight")
    g.add_argument("--k", type=int, default=d.k, help="neighbors per view")
    g.add_argument("--tol", type=float, default=d.tol, help="relative objective decrease to stop at")
    g.add_argument("--max-iter", type=int, default=d.max_iter, help="outer iteration cap")
    g.add_argument("--qp-tol", type=float, default=d.qp_tol, help="inner QP KKT tolerance")
    g.add_argument("--qp-max-iter", type=int, default=d.qp_max_iter, help="inner QP iteration cap")
    g.add_argument("--per-view-nbrs", action="store_true",
                   help="use each view's own neighbors instead of the cross-view union")


def _hyper(args):
    return Hyperparams(
        lam=args.lam, mu1=args.mu1, mu2=args.mu2, sigma=args.sigma, gamma=args.gamma, k=args.k,
        tol=args.tol, max_iter=args.max_iter, qp_tol=args.qp_tol, qp_max_iter=args.qp_max_iter,
        seed=args.seed, complement=not args.per_view_nbrs,
    )


def _add_cv_flags(p):
    p.add_argument("--data", required=True, type=Path, help="dataset directory")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="seed for folds and label masks")
    p.add_argument("--jobs", type=int, default=1, help="folds trained in parallel")
    p.add_argument("--fold-indices", type=_int_list, default=None,
                   help="run only these folds (comma-separated, 0-based)")


def build_parser():
    parser = _Parser(prog="mvldl", description="Multi-view semi-supervised label distribution learning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic multi-view dataset")
    p.add_argument("--n", type=int, default=SyntheticSpec.n)
    p.add_argument("--views", type=int, default=SyntheticSpec.V)
    p.add_argument("--labels", type=int, default=SyntheticSpec.q)
    p.add_argument("--dims", type=_int_list, default=None, help="feature dimension per view")
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--noise", type=float, default=SyntheticSpec.noise)
    p.add_argument("--temperature", type=float, default=SyntheticSpec.temperature)
    p.add_argument("--latent-dim", type=int, default=SyntheticSpec.latent_dim)
    p.add_argument("--complementary", action="store_true",
                   help="give every view its own slice of the latent space")
    p.add_argument("--labeled-ratio", type=float, default=None,
                   help="also write a labeled mask with this fraction of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("train", help="train on a dataset and write the model")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="model JSON path")
    p.add_argument("--labeled-ratio", type=float, default=None,
                   help="mask labels down to this fraction before training")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-similarity", type=Path, default=None,
                   help="write the learned similarity matrix as row,col,value lines")
    p.add_argument("--trace", type=Path, default=None, help="write the objective trace as CSV")
    _add_hyper_flags(p)

    p = sub.add_parser("predict", help="predict label distributions")
    p.add_argument("--model", required=True, type=Path)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="dataset directory (its views are used)")
    src.add_argument("--views", type=Path, nargs="+", help="one CSV of sample rows per view")
    p.add_argument("--out", required=True, type=Path, help="predictions CSV path")

    p = sub.add_parser("cv", help="k-fold cross-validation")
    _add_cv_flags(p)
    p.add_argument("--labeled-ratio", type=float, default=0.1)
    p.add_argument("--out", required=True, type=Path, help="report JSON path")
    p.add_argument("--csv", type=Path, default=None, help="one-row CSV summary path")
    _add_hyper_flags(p)

    p = sub.add_parser("sweep", help="cross-validation over labeled ratios or lambda values")
    _add_cv_flags(p)
    grid = p.add_mutually_exclusive_group(required=True)
    grid.add_argument("--ratios", type=_float_list)
    grid.add_argument("--lambda-grid", type=_float_list)
    p.add_argument("--labeled-ratio", type=float, default=0.1, help="ratio used by a lambda sweep")
    p.add_argument("--out", required=True, type=Path, help="CSV table path")
    p.add_argument("--json", type=Path, default=None, help="also write a JSON report")
    _add_hyper_flags(p)

    p = sub.add_parser("ablate", help="cross-validation of an ablation variant")
    _add_cv_flags(p)
    p.add_argument("--variant", required=True, help=f"one of {', '.join(experiments.VARIANTS)}")
    p.add_argument("--labeled-ratio", type=float, default=0.1)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--csv", type=Path, default=None)
    _add_hyper_flags(p)
    return parser


def load_schema(name):
    text = resources.files("mvldl").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _write_json(path, doc, schema):
    jsonschema.validate(doc, load_schema(schema))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _write_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _metrics_block(agg):
    return agg.to_dict()["metrics"]


def _cv_doc(command, variant, ds, res):
    return {
        "command": command,
        "variant": variant,
        "dataset": {"n": ds.n, "V": ds.V, "q": ds.q, "dims": ds.dims},
        "settings": {"folds": len(res.folds), "labeled_ratio": res.ratio, "seed": res.seed},
        "hyperparams": res.hyper.to_dict(),
        "prediction": "projected",
        "metrics": _metrics_block(res.aggregate),
        "metrics_clamped": _metrics_block(res.aggregate_clamped),
        "per_fold": [
            {
                "fold": f.fold,
                "labeled": f.labeled,
                "iterations": f.iterations,
                "converged": f.converged,
                "metrics": {m: getattr(f.report, m) for m in metrics.METRIC_NAMES},
                "metrics_clamped": {m: getattr(f.clamped, m) for m in metrics.METRIC_NAMES},
            }
            for f in res.folds
        ],
    }


def _summary_row(res):
    agg = res.aggregate
    return [agg.mean[m] for m in metrics.METRIC_NAMES] + [agg.std[m] for m in metrics.METRIC_NAMES]


def _summary_header():
    return [f"{m}_mean" for m in metrics.METRIC_NAMES] + [f"{m}_std" for m in metrics.METRIC_NAMES]


def _cv_kwargs(args):
    return dict(folds=args.folds, seed=args.seed, jobs=args.jobs, fold_indices=args.fold_indices)


def cmd_generate(args):
    spec = SyntheticSpec(
        n=args.n, V=args.views, q=args.labels, dims=args.dims, clusters=args.clusters, noise=args.noise,
        temperature=args.temperature, seed=args.seed, latent_dim=args.latent_dim,
        complementary=args.complementary,
    )
    ds = generate_synthetic(spec)
    if args.labeled_ratio is not None:
        # unlabeled rows keep their truth on disk; the mask marks what training may use
        masked = mask_labels(ds, args.labeled_ratio, args.seed)
        save_dataset(ds, args.out, write_mask=False)
        with open(args.out / "labeled_mask.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{i}\n" for i in masked.labeled)
    else:
        save_dataset(ds, args.out)
    print(f"n={ds.n} V={ds.V} q={ds.q} dims={','.join(map(str, ds.dims))}")
    return EXIT_OK


def cmd_train(args):
    hyper = _hyper(args)
    ds = load_dataset(args.data)
    if args.labeled_ratio is not None:
        ds = mask_labels(ds, args.labeled_ratio, args.seed)
    result = train(ds, hyper)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_model(result.params, hyper, args.out)
    jsonschema.validate(json.loads(args.out.read_text(encoding="utf-8")), load_schema("model"))
    if args.dump_similarity is not None:
        dump_similarity(result.graph, args.dump_similarity)
    if args.trace is not None:
        _write_rows(args.trace, ["iteration", "step", "objective"],
                    [[it, name, repr(float(f))] for it, name, f in result.trace.steps])
    tr = result.trace
    print(f"iterations={tr.iterations} converged={str(tr.converged).lower()} objective={float(tr.objectives[-1])!r}")
    return EXIT_OK


def _read_matrix(path):
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise MvldlError(f"{path}: {exc}") from None
    return data


def cmd_predict(args):
    params, _ = load_model(args.model)
    if args.data is not None:
        views = load_dataset(args.data).views
    else:
        views = [_read_matrix(p) for p in args.views]
    out = predict(params, views)
    _write_rows(args.out, [f"label_{j}" for j in range(out.shape[1])],
                [[repr(float(x)) for x in row] for row in out])
    print(f"predicted {out.shape[0]} samples")
    return EXIT_OK


def _run_cv(args, variant):
    ds = load_dataset(args.data)
    hyper = experiments.variant_hyper(_hyper(args), variant)
    res = experiments.cross_validate(ds, hyper, ratio=args.labeled_ratio, **_cv_kwargs(args))
    command = "cv" if args.command == "cv" else "ablate"
    _write_json(args.out, _cv_doc(command, variant, ds, res), "cv_report")
    if args.csv is not None:
        _write_rows(args.csv, ["variant", "folds", "labeled_ratio"] + _summary_header(),
                    [[variant, len(res.folds), repr(res.ratio)] + [repr(x) for x in _summary_row(res)]])
    agg = res.aggregate
    print(f"{variant}: chebyshev {agg.mean['chebyshev']:.4f} +- {agg.std['chebyshev']:.4f} over {agg.folds} folds")
    return EXIT_OK


def cmd_cv(args):
    return _run_cv(args, "full")


def cmd_ablate(args):
    if args.variant not in experiments.VARIANTS:
        raise ParameterError(f"unknown variant {args.variant!r}; choose from {', '.join(experiments.VARIANTS)}")
    return _run_cv(args, args.variant)


def cmd_sweep(args):
    ds = load_dataset(args.data)
    hyper = _hyper(args)
    kw = _cv_kwargs(args)
    if args.ratios is not None:
        key = "labeled_ratio"
        runs = experiments.sweep_ratios(ds, args.ratios, hyper, **kw)
    else:
        key = "lambda"
        runs = experiments.sweep_lambda(ds, args.lambda_grid, hyper, ratio=args.labeled_ratio, **kw)
    _write_rows(args.out, [key] + _summary_header(),
                [[repr(v)] + [repr(x) for x in _summary_row(res)] for v, res in runs])
    if args.json is not None:
        doc = {
            "command": "sweep",
            "parameter": key,
            "dataset": {"n": ds.n, "V": ds.V, "q": ds.q, "dims": ds.dims},
            "settings": {"folds": args.folds, "seed": args.seed},
            "hyperparams": hyper.to_dict(),
            "points": [{"value": v, "labeled_ratio": res.ratio, "metrics": _metrics_block(res.aggregate),
                        "metrics_clamped": _metrics_block(res.aggregate_clamped)} for v, res in runs],
        }
        _write_json(args.json, doc, "sweep_report")
    for v, res in runs:
        print(f"{key}={v!r}: chebyshev {res.mean():.4f}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def _configure_logging():
    level = os.environ.get("MVLDL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ParameterError as exc:
        print(f"mvldl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MvldlError, OSError, jsonschema.ValidationError) as exc:
        print(f"mvldl {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
