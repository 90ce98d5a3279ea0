"""Command-line front end.

Exit codes: 0 success, 2 invalid model/measure/parameters, 3 refused by a
resource guard (rerun with --force).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._rational import as_number, to_text
from ._rng import seed_to_int

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_GUARD = 3

NAMED_MEASURES = {
    "example36a": ("good", "single-phase step atoms, limit frequency reached monotonically"),
    "example36b": ("half", "step atoms parked near 1/2 inside greedy windows"),
    "example37": ("mixed", "good and evil step atoms"),
}


class SpecError(ValueError):
    pass


class GuardViolation(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# spec parsing


def _load_json(text: str):
    p = Path(text)
    if not text.lstrip().startswith("{") and p.exists():
        text = p.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"invalid JSON spec: {exc}") from exc


def model_spec(args) -> dict:
    if getattr(args, "spec", None):
        return _load_json(args.spec)
    if not getattr(args, "model", None):
        raise SpecError("give --model or --spec")
    spec = {"kind": args.model}
    for key in ("alpha", "theta", "gamma"):
        val = getattr(args, key, None)
        if val is not None:
            spec[key] = val
    return spec


def build_model(args):
    from .models import AssumptionError, model_from_json

    spec = model_spec(args)
    try:
        m = model_from_json(spec, exact=True)
        # validate the insertion rule on small trees (Assumption (A) included)
        for j in range(2, 6):
            m.g0(j)
    except (AssumptionError, ValueError, KeyError, TypeError, ZeroDivisionError) as exc:
        raise SpecError(f"bad model spec {spec}: {exc}") from exc
    return m, spec


def build_measure(args):
    """Named step-rule measure, JSON measure spec, or the measure of a model."""
    from .laws import FromGrowthRule, StepAtomic, measure_from_json

    name = getattr(args, "measure", None)
    gamma = getattr(args, "gamma", None) or "1/2"
    horizon = getattr(args, "horizon", None)
    if name in NAMED_MEASURES:
        kind = NAMED_MEASURES[name][0]
        try:
            d = StepAtomic(gamma, kind, horizon or (200_000 if kind == "mixed" else 4096))
        except (ValueError, RuntimeError) as exc:
            raise SpecError(str(exc)) from exc
        return d, {"named": name, **d.to_json()}
    if name:
        data = _load_json(name)
        try:
            return measure_from_json(data, exact=bool(args.exact)), data
        except (ValueError, KeyError, TypeError) as exc:
            raise SpecError(f"bad measure spec: {exc}") from exc
    m, spec = build_model(args)
    lam2 = as_number(getattr(args, "lam2", "1") or "1")
    return FromGrowthRule(m, lam2), {"model": spec, "lambda2": to_text(lam2)}


def _float_model(m):
    return m.as_float() if getattr(m, "exact", False) and m.kernel_code is not None else m


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _guard(n: int, limit: int, force: bool, what: str):
    if n > limit and not force:
        raise GuardViolation(f"{what} refused for n = {n} > {limit}; pass --force to override")


# ---------------------------------------------------------------------------
# commands


def cmd_grow(args) -> int:
    from .models import grow
    from .trees import first_split, height, newick_export

    m, spec = build_model(args)
    if args.n < 1:
        raise SpecError("n must be >= 1")
    t = grow(_float_model(m) if not args.exact else m, args.n, seed_to_int(args.seed))
    if args.format == "json":
        text = json.dumps({"spec": spec, "seed": args.seed, "n": args.n, "tree": t.to_json()}, sort_keys=True)
    else:
        text = newick_export(t) if args.n > 1 else "(1);"
    _emit(text, args.out)
    info = f"height {int(height(t))}"
    if args.n > 1:
        info += f"  first split {first_split(t)}"
    print(info, file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_laws(args) -> int:
    from .laws import splitting_csv, tree_prob
    from .trees import enumerate_trees, newick_export

    m, _ = build_model(args)
    _guard(args.n, 8, args.force, "exact law tables")
    if args.n < 2:
        raise SpecError("n must be >= 2")
    text = splitting_csv(m, args.n, force=args.force, lam2=as_number(args.lam2))
    if args.trees:
        rows = ["", "tree,probability,float"]
        total = Fraction(0) if m.exact else 0.0
        memo: dict = {}
        for t in enumerate_trees(args.n, force=args.force):
            p = tree_prob(m, t, memo)
            total += p
            rows.append(f"\"{newick_export(t)}\",{to_text(p)},{float(p):.17g}")
        rows.append(f"total,{to_text(total)},{float(total):.17g}")
        text += "\n".join(rows) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_kappa(args) -> int:
    from .laws import kappa_cylinder, kappa_one_mass
    from .partitions import set_partitions

    d, spec = build_measure(args)
    _guard(args.n, 10, args.force, "partition enumeration")
    rows = ["partition,kappa,float"]
    for pi in set_partitions(args.n):
        if pi.is_one():
            val = kappa_one_mass(d, args.n)
            rows.append(f"{pi},{to_text(val) if not math.isinf(float(val)) else 'inf'},{float(val):.17g}")
            continue
        val = kappa_cylinder(d, pi)
        rows.append(f"{pi},{to_text(val)},{float(val):.17g}")
    lam = d.lam(args.n)
    rows.append(f"lambda_{args.n},{to_text(lam)},{float(lam):.17g}")
    _emit("\n".join(rows) + "\n", args.out)
    return EXIT_OK


def _t_grid(text: str):
    if ":" in text:
        a, b, k = text.split(":")
        return np.linspace(float(a), float(b), int(k))
    return np.array([float(x) for x in text.split(",")])


def cmd_residual(args) -> int:
    from .laws import lambda_array
    from .residual import chain_samples, scaled_chain_marginals

    m, spec = build_model(args)
    mf = _float_model(m)
    t = _t_grid(args.t)
    mat = chain_samples(mf, args.n, args.samples, seed_to_int(args.seed))
    lam = float(lambda_array(mf, float(as_number(args.lam2, False)), args.n)[args.n])
    vals, absn = scaled_chain_marginals(mat, args.n, lam, t)
    if args.format == "json":
        out = {"spec": spec, "seed": args.seed, "n": args.n, "lambda_n": lam, "t": t.tolist(),
               "mean": vals.mean(axis=0).tolist(), "absorption_mean": float(absn.mean()),
               "absorption_se": float(absn.std(ddof=1) / math.sqrt(absn.size)) if absn.size > 1 else None}
        _emit(json.dumps(out, indent=2), args.out)
    else:
        rows = ["t,mean,q10,q50,q90"]
        for i, ti in enumerate(t):
            q = np.quantile(vals[:, i], [0.1, 0.5, 0.9])
            rows.append(f"{ti:.10g},{vals[:, i].mean():.10g},{q[0]:.10g},{q[1]:.10g},{q[2]:.10g}")
        rows.append(f"# absorption A_n/lambda_n mean {absn.mean():.10g}")
        _emit("\n".join(rows) + "\n", args.out)
    return EXIT_OK


def cmd_lamperti(args) -> int:
    from .residual import jump_law, lamperti_batch, laplace_exponent, path_csv

    d, spec = build_measure(args)
    gamma = float(as_number(args.gamma_index, False)) if args.gamma_index else _model_gamma(args)
    t = _t_grid(args.t)
    try:
        law = jump_law(d)
        psi = laplace_exponent(d)
    except TypeError as exc:
        raise SpecError(str(exc)) from exc
    vals, absn = lamperti_batch(law, gamma, t, args.samples, seed_to_int(args.seed), psi=psi)
    if args.samples == 1:
        text = path_csv(t, vals[0]) + f"# absorption {absn[0]:.10g}\n"
    else:
        rows = ["t,mean"] + [f"{ti:.10g},{vals[:, i].mean():.10g}" for i, ti in enumerate(t)]
        rows.append(f"# absorption mean {absn.mean():.10g} (1/psi(gamma) = {1 / psi(gamma):.10g})")
        text = "\n".join(rows) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def _model_gamma(args) -> float:
    if getattr(args, "model", None) in ("alpha_theta", "ford", "poisson_dirichlet") and args.alpha:
        return float(as_number(args.alpha, False))
    if getattr(args, "measure", None) in NAMED_MEASURES:
        return float(as_number(args.gamma or "1/2", False))
    raise SpecError("give --index (the self-similarity index gamma)")


def cmd_ctmc(args) -> int:
    from .fragsim import ctmc_genealogy

    m, spec = build_model(args)
    g = ctmc_genealogy(_float_model(m), args.n, float(as_number(args.lam2, False)), seed_to_int(args.seed))
    if args.format == "json":
        _emit(json.dumps({"spec": spec, "seed": args.seed, **g.to_json()}, indent=2), args.out)
    else:
        _emit(g.newick(), args.out)
    return EXIT_OK


def cmd_massfrag(args) -> int:
    from .fragsim import brownian_heights, brownian_nu_sampler, mass_frag_tree

    gamma = float(as_number(args.gamma or "1/2", False))
    scale = float(as_number(args.scale, False)) if args.scale else math.sqrt(2 / math.pi)
    if args.samples > 1:
        h = brownian_heights(args.samples, gamma, args.eps, args.floor, scale, seed_to_int(args.seed))
        rows = ["sample,height"] + [f"{i},{x:.10g}" for i, x in enumerate(h)]
        _emit("\n".join(rows) + "\n", args.out)
        return EXIT_OK
    nu = brownian_nu_sampler(args.eps, scale)
    tree = mass_frag_tree(gamma, nu, mass_floor=args.floor, seed=seed_to_int(args.seed))
    _emit(json.dumps({"gamma": gamma, "eps": args.eps, "mass_floor": args.floor, "seed": args.seed,
                      "height": tree.height(), "tree": tree.to_json()}), args.out)
    return EXIT_OK


def _verdict_line(verdict: str, detail: str) -> str:
    return f"verdict: {verdict} ({detail})"


def cmd_check(args) -> int:
    from . import diagnostics as dg
    from .laws import StepAtomic

    d, spec = build_measure(args)
    which = args.which
    if which == "hm":
        m, _ = build_model(args) if not isinstance(d, StepAtomic) else (None, None)
        if m is None:
            raise SpecError("--which hm needs a growth model")
        _guard(args.n_max, 10, args.force, "exact enumeration")
        hm = dg.hm_condition_measure(m, args.n_max, lam2=as_number(args.lam2), force=args.force)
        rows = ["s,mass"] + [f"\"{tuple(to_text(x) for x in s)}\",{to_text(v)}" for s, v in hm.atoms.items()]
        lhs, rhs = hm.integrate(lambda s: 1), hm.kappa_side(d, lambda s: 1)
        rows.append(_verdict_line("IDENTITY HOLDS" if lhs == rhs else "IDENTITY FAILS",
                                  f"total mass {to_text(lhs)} vs kappa side {to_text(rhs)}"))
        _emit("\n".join(rows) + "\n", args.out)
        return EXIT_OK
    n_max = args.n_max
    if isinstance(d, StepAtomic):
        if n_max is None:
            done = [r["l"] for r in (d.schedule.rounds if d.schedule else []) if r["l"]]
            n_max = done[-1] if done else d.horizon
        grid = sorted(set(list(range(2, min(n_max, 2000) + 1)) +
                          np.unique(np.geomspace(2, n_max, 200).astype(int)).tolist()))
    else:
        n_max = n_max or 1000
        grid = np.unique(np.geomspace(2, n_max, 40).astype(int)).tolist()
    if which == "corollary":
        mism, series = dg.corollary_terms(d, grid, seed=seed_to_int(args.seed))
        text = series.to_csv()
        last = float(series.value[-1])
        ok = math.isfinite(mism) and abs(last) < args.tol
        text += _verdict_line("CONVERGES" if ok else "FAILS",
                              f"mismatch mass {mism:.6g}; |equal-set term at n={n_max}| = {abs(last):.3g} vs {args.tol}")
        _emit(text + "\n", args.out)
        return EXIT_OK
    fn = dg.tree_condition_series if which == "tree" else dg.mass_condition_series
    series = fn(d, grid, seed=seed_to_int(args.seed))
    last = float(series.value[-1])
    if isinstance(d, StepAtomic) and d.kind == "half":
        start = dg.window_onset(d)
    else:
        start = int(series.n[len(series.n) // 2])
    floor = float(np.max(series.hi[series.n >= start]))
    if abs(last) < args.tol:
        line = _verdict_line("CONVERGES", f"|series({n_max})| = {abs(last):.3g} < {args.tol}")
    else:
        line = _verdict_line("FAILS", f"|series({n_max})| = {abs(last):.3g} >= {args.tol}; "
                                      f"sup over n >= {start}: {floor:.6g}")
    text = (series.to_csv() if args.format != "json" else json.dumps(series.to_json(), default=str)) + line + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    from . import diagnostics as dg
    from .laws import StepAtomic

    seed = seed_to_int(args.seed)
    if args.kind == "height":
        m, spec = build_model(args)
        ns = [int(x) for x in args.n_list.split(",")]
        rep = dg.height_scaling_experiment(_float_model(m), ns, args.samples, seed,
                                           lam2=float(as_number(args.lam2, False)), workers=args.threads)
        rep.spec["model"] = spec
    elif args.kind == "residual":
        if getattr(args, "measure", None) in NAMED_MEASURES:
            d, spec = build_measure(args)
            rep = dg.residual_limit_test(d, n=args.n, t_list=_t_grid(args.t), samples=args.samples, seed=seed)
            rep.spec["measure"] = spec
        else:
            m, spec = build_model(args)
            rep = dg.residual_limit_test(_float_model(m), n=args.n, t_list=_t_grid(args.t), samples=args.samples,
                                         seed=seed, lam2=float(as_number(args.lam2, False)))
            rep.spec["model"] = spec
    elif args.kind == "ctmc":
        from .fragsim import ctmc_batch

        m, spec = build_model(args)
        trees, holds = ctmc_batch(_float_model(m), args.n, args.samples, float(as_number(args.lam2, False)), seed)
        from scipy import stats

        from .laws import lambda_array

        lam = lambda_array(_float_model(m), float(as_number(args.lam2, False)), args.n)
        rep = dg.Report("ctmc", {"model": spec, "n": args.n, "samples": args.samples}, seed)
        for k in sorted(holds):
            ks = stats.kstest(holds[k], "expon", args=(0, 1 / lam[k]))
            rep.rows.append({"block_size": k, "count": len(holds[k]), "mean_hold": float(holds[k].mean()),
                             "expected": float(1 / lam[k]), "ks": float(ks.statistic), "p_value": float(ks.pvalue)})
    else:  # pragma: no cover - argparse restricts choices
        raise SpecError(args.kind)
    _emit(rep.dumps() if args.format == "json" else rep.to_csv(), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_model(p):
    p.add_argument("--model", choices=["ford", "alpha_gamma", "alpha_theta", "poisson_dirichlet"])
    p.add_argument("--alpha")
    p.add_argument("--theta")
    p.add_argument("--gamma", help="alpha-gamma parameter, or the index of a named measure")
    p.add_argument("--spec", help="model spec as JSON text or a path to a JSON file")
    p.add_argument("--lam2", default="1", help="lambda_2 (time scale), default 1")


def _add_measure(p):
    _add_model(p)
    p.add_argument("--measure", help="example36a | example36b | example37 | measure JSON")
    p.add_argument("--horizon", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--format", choices=["csv", "json", "newick"], default=None)
    common.add_argument("--exact", action="store_true", help="exact rational arithmetic where available")
    common.add_argument("--force", action="store_true", help="override resource guards")
    common.add_argument("--out", "-o", help="output file (default stdout)")

    ap = argparse.ArgumentParser(prog="regrowth", description="Regenerative tree growth: simulation and exact laws.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grow", parents=[common], help="grow one tree")
    _add_model(p)
    p.add_argument("-n", type=int, required=True)
    p.set_defaults(func=cmd_grow)

    p = sub.add_parser("laws", parents=[common], help="exact splitting rule, tree probabilities and lambda")
    _add_model(p)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--trees", action="store_true", help="also list every tree probability")
    p.set_defaults(func=cmd_laws)

    p = sub.add_parser("kappa", parents=[common], help="cylinder masses of a dislocation measure")
    _add_measure(p)
    p.add_argument("-n", type=int, required=True)
    p.set_defaults(func=cmd_kappa)

    p = sub.add_parser("residual", parents=[common], help="scaled residual-mass chain of leaf 1")
    _add_model(p)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--t", default="0:2:21", help="comma list or start:stop:count")
    p.set_defaults(func=cmd_residual)

    p = sub.add_parser("lamperti", parents=[common], help="Lamperti limit of the residual mass")
    _add_measure(p)
    p.add_argument("--index", dest="gamma_index", help="self-similarity index gamma")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--t", default="0:2:21")
    p.set_defaults(func=cmd_lamperti)

    p = sub.add_parser("ctmc", parents=[common], help="continuous-time genealogy on [n]")
    _add_model(p)
    p.add_argument("-n", type=int, required=True)
    p.set_defaults(func=cmd_ctmc)

    p = sub.add_parser("massfrag", parents=[common], help="Brownian mass-fragmentation tree")
    p.add_argument("--gamma", default="1/2")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--floor", type=float, default=1e-3)
    p.add_argument("--scale", help="density constant (default sqrt(2/pi))")
    p.add_argument("--samples", type=int, default=1, help="> 1 prints heights only")
    p.set_defaults(func=cmd_massfrag)

    p = sub.add_parser("check", parents=[common], help="convergence-condition series with a verdict")
    _add_measure(p)
    p.add_argument("--which", choices=["tree", "mass", "corollary", "hm"], default="tree")
    p.add_argument("--n-max", type=int)
    p.add_argument("--tol", type=float, default=0.01)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("experiment", parents=[common], help="height / residual / ctmc report bundles")
    _add_measure(p)
    p.add_argument("kind", choices=["height", "residual", "ctmc"])
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--n-list", default="500,1000,2000")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--t", default="0.25,0.5")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    from .laws import GuardError
    from .models import AssumptionError

    args = build_parser().parse_args(argv)
    if args.format is None:
        args.format = "newick" if args.command in ("grow", "ctmc") else "csv"
    try:
        return args.func(args)
    except (GuardViolation, GuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (SpecError, AssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except ValueError as exc:
        if "refused" in str(exc) or "guard" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_GUARD
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
