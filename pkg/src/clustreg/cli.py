"""Command-line interface: ``clustreg fit|search|simulate|eval``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 budget
exhausted (the partial result is still written).
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
from pathlib import Path

from ._em import EMControl
from .data import GeneratorSpec, generate, load_csv, load_labels, monte_carlo_design, save_csv, save_labels
from .errors import BlockFitError, BudgetExceededError, ClustregError, NumericalError, ValidationError
from .joint import FitCache, ModelSpec, fit_joint, rescore
from .metrics import ari, crosstab
from .search import GAControl, regressor_refine, search

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_BUDGET = 4


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _em_flags(p):
    g = p.add_argument_group("EM control")
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--max-iter", type=int, default=500)
    g.add_argument("--n-starts", type=int, default=10)
    g.add_argument("--floor-scale", type=float, default=1e-8)
    g.add_argument("--no-kmeans-start", dest="kmeans_start", action="store_false")


def _em_control(args) -> EMControl:
    return EMControl(
        tol=args.tol, max_iter=args.max_iter, n_starts=args.n_starts,
        seed=args.seed, floor_scale=args.floor_scale, kmeans_start=args.kmeans_start,
    )


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror}") from None


def _load_spec(doc) -> ModelSpec:
    try:
        return ModelSpec.from_dict(doc.get("spec", doc))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed model specification: {exc}") from None


def cmd_fit(args) -> int:
    data = load_csv(args.data)
    doc = _read_json(args.spec)
    if args.rescore:
        if "blocks" not in doc:
            raise ValidationError("--rescore needs a fitted-model document (output of 'fit')")
        out = rescore(doc, data)
        print(f"loglik {out['loglik']!r}  npar {out['npar']}  BIC {out['bic']!r}")
        return EXIT_OK
    spec = _load_spec(doc)
    _seed(args)
    fit = fit_joint(data, spec, _em_control(args))
    if args.refine:
        fit = regressor_refine(data, fit, _em_control(args), FitCache())
    result = fit.to_dict()
    lines = [fit.summary(data.column_names)]
    if args.truth:
        if len(args.truth) > spec.G:
            raise ValidationError(f"{len(args.truth)} truth files for {spec.G} cluster structures")
        scores = {}
        for g, path in enumerate(args.truth):
            truth = load_labels(path)
            if len(truth) != data.n:
                raise ValidationError(f"{path}: {len(truth)} labels for {data.n} observations")
            scores[f"S{g + 1}"] = ari(truth, fit.assignments[g].tolist())
            lines.append(f"aRi S{g + 1} vs {path}: {scores[f'S{g + 1}']:.4f}")
        result["ari"] = scores
    _write_json(result, args.out)
    print("\n".join(lines), file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_search(args) -> int:
    data = load_csv(args.data)
    seed = _seed(args)
    ctrl = GAControl(
        n1=args.n1, n2=args.n2, d1max=args.d1max, d2max=args.d2max,
        k1max=args.k1max, k2max=args.k2max,
        crossover_prob=args.crossover_prob, mutation_prob=args.mutation_prob,
        seed=seed, parsimonious=args.parsimonious, max_evaluations=args.max_evaluations,
        threads=args.threads, em=_em_control(args),
    )
    cache = FitCache()
    res = search(data, ctrl, cache)
    best = res.best
    if args.refine:
        best = regressor_refine(data, best, ctrl.em, cache)
    doc = best.to_dict()
    doc["search"] = {
        "control": ctrl.to_dict(),
        "exhausted": res.exhausted,
        "n_evaluations": res.n_evaluations,
        "phase_a": res.phase_a.spec.to_dict(),
    }
    _write_json(doc, args.out)
    if args.history:
        res.history_csv(args.history)
    stream = sys.stderr if args.out in (None, "-") else sys.stdout
    print(f"selected  {best.spec.describe()}", file=stream)
    print(f"BIC       {best.bic:.4f}  (loglik {best.loglik:.4f}, npar {best.npar})", file=stream)
    if res.exhausted:
        print("evaluation budget exhausted; best model so far written", file=stream)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.n < 2:
        raise ValidationError("--n must be at least 2")
    if (args.design is None) == (args.spec is None):
        raise ValidationError("give exactly one of --design or --spec")
    seed = _seed(args)
    if args.design is not None:
        spec = monte_carlo_design(seed)
    else:
        spec = GeneratorSpec.from_dict(_read_json(args.spec))
    data, labels = generate(spec, args.n, seed)
    save_csv(data, args.out)
    stem = Path(args.out)
    paths = []
    for g, lab in enumerate(labels):
        path = stem.with_name(f"{stem.stem}_labels_S{g + 1}.csv")
        save_labels(lab + 1, path, name=f"S{g + 1}")
        paths.append(str(path))
    print(f"wrote {data.n}x{data.L} data to {args.out}; labels: {', '.join(paths)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    a = load_labels(args.labels_a)
    b = load_labels(args.labels_b)
    table = crosstab(a, b)
    print(table.to_text(Path(args.labels_a).stem, Path(args.labels_b).stem))
    print(f"aRi {ari(a, b):.4f}")
    if args.csv:
        Path(args.csv).write_text(table.to_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clustreg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a specified joint model")
    f.add_argument("data", help="CSV file with a header row")
    f.add_argument("spec", help="model specification JSON (or a fitted-model document)")
    f.add_argument("--out", help="write the fitted model JSON here (default: stdout)")
    f.add_argument("--truth", action="append", help="true labels for S1, S2, ... (repeatable)")
    f.add_argument("--rescore", action="store_true", help="recompute loglik/BIC of a fitted-model document")
    f.add_argument("--refine", action="store_true", help="refine per-response regressor sets by BIC")
    f.add_argument("--seed", type=int)
    _em_flags(f)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("search", help="genetic search for the best model")
    s.add_argument("data")
    s.add_argument("--out", help="best-model JSON (default: stdout)")
    s.add_argument("--history", help="per-generation history CSV")
    s.add_argument("--n1", type=int, default=200)
    s.add_argument("--n2", type=int, default=80)
    s.add_argument("--d1max", type=int, default=30)
    s.add_argument("--d2max", type=int, default=20)
    s.add_argument("--k1max", type=int, default=3)
    s.add_argument("--k2max", type=int, default=3)
    s.add_argument("--crossover-prob", type=float, default=0.8)
    s.add_argument("--mutation-prob", type=float, default=0.1)
    s.add_argument("--parsimonious", action="store_true")
    s.add_argument("--max-evaluations", type=int)
    s.add_argument("--refine", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    _em_flags(s)
    s.set_defaults(func=cmd_search)

    m = sub.add_parser("simulate", help="draw a dataset from a generator specification")
    m.add_argument("--design", choices=["montecarlo"], help="bundled simulation design")
    m.add_argument("--spec", help="generator specification JSON")
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int)
    m.set_defaults(func=cmd_simulate)

    e = sub.add_parser("eval", help="contingency table and aRi of two label files")
    e.add_argument("labels_a")
    e.add_argument("labels_b")
    e.add_argument("--csv", help="write the table as CSV")
    e.set_defaults(func=cmd_eval)
    return p


def _exit_code(exc) -> int:
    if isinstance(exc, BlockFitError):
        exc = exc.cause
    if isinstance(exc, BudgetExceededError):
        return EXIT_BUDGET
    if isinstance(exc, ValidationError):
        return EXIT_INVALID
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ClustregError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
