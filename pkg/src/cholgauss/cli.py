"""Command-line interface.

Subcommands: ``simulate`` (synthetic data), ``describe`` (parameter
accounting for a model document), ``fit``, ``predict``, ``score``, ``cv``,
and ``experiment`` (the canned study drivers).  Model specifications are
JSON documents with a small formula grammar per distributional parameter,
e.g. ``{"mu[i]": "cyclic(yday) + cyclic(yday):mean[i]"}``; ``[i]`` (and
``[i,j]`` for pair parameters) broadcast over components.  All outputs are
CSV or JSON written atomically.
"""

import argparse
import json
import os
import re
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from .basis import TermSpec
from .estimate import (
    ConvergenceError,
    FitOptions,
    FitState,
    ModelSpec,
    fit_pml,
)
from .predict_score import aggregate_scores, kfold_cv, predict, score_rows
from .simgen import (
    SUPPORTED_DIMS,
    SimConfig,
    generate,
    generate_weather_analog,
    true_params,
)

DEFAULT_PERIOD = 365.25


# ---------------------------------------------------------------------------
# Model-spec documents

_SMOOTH_RE = re.compile(
    r"^(s|cyclic)\(\s*([A-Za-z_]\w*(?:\[[ij]\])?)\s*((?:,\s*\w+\s*=\s*[\d.]+\s*)*)\)$"
)


def _parse_opts(text):
    opts = {}
    for part in re.findall(r"(\w+)\s*=\s*([\d.]+)", text or ""):
        key, val = part
        opts[key] = float(val) if "." in val else int(val)
    return opts


def _parse_term(token, defaults):
    token = token.strip()
    if token == "1":
        return TermSpec("intercept")
    by = None
    if ")" in token and ":" in token.split(")")[-1]:
        head, by = token.rsplit(":", 1)
        token = head.strip()
        by = by.strip()
    match = _SMOOTH_RE.match(token)
    if match:
        kind, cov, opt_text = match.groups()
        opts = _parse_opts(opt_text)
        df = int(opts.get("df", defaults.get("df", 10)))
        if kind == "cyclic":
            period = float(opts.get("period", defaults.get("period", DEFAULT_PERIOD)))
            if by:
                return TermSpec(
                    "varying_coefficient", cov, df=df, period=period, by=by
                )
            return TermSpec("cyclic_smooth", cov, df=df, period=period)
        if by:
            return TermSpec("varying_coefficient", cov, df=df, by=by)
        return TermSpec("smooth", cov, df=df)
    if re.fullmatch(r"[A-Za-z_]\w*(\[[ij]\])?", token):
        return TermSpec("linear", token)
    raise ValueError(f"cannot parse term {token!r}")


def _parse_formula(formula, defaults):
    return [_parse_term(tok, defaults) for tok in formula.split("+")]


def _substitute(text, i=None, j=None):
    if i is not None:
        text = text.replace("[i]", f"_{i}")
    if j is not None:
        text = text.replace("[j]", f"_{j}")
    return text


def _concretize(term, i=None, j=None):
    changes = {}
    if term.covariate and "[" in term.covariate:
        changes["covariate"] = _substitute(term.covariate, i, j)
    if term.by and "[" in term.by:
        changes["by"] = _substitute(term.by, i, j)
    if changes:
        from dataclasses import replace

        return replace(term, label="", **changes)
    return term


def parse_model_document(doc):
    """Build a ModelSpec from a JSON model document (dict)."""
    family = doc["family"]
    k = int(doc["k"])
    ad_order = doc.get("ad_order")
    defaults = doc.get("defaults", {})
    response = doc.get("response", "y[i]")
    if isinstance(response, str):
        response = [_substitute(response, i=i) for i in range(1, k + 1)]
    base = ModelSpec(family, k, ad_order=ad_order, response=response)
    names = base.param_names()
    formulas = doc.get("formulas", {})
    terms = {}
    for key, formula in formulas.items():
        parsed = _parse_formula(formula, defaults)
        if "[i,j]" in key:
            stem = key.split("[")[0]
            for name in names:
                m = re.fullmatch(rf"{stem}_(\d+)_(\d+)", name)
                if m:
                    i, j = int(m.group(1)), int(m.group(2))
                    terms[name] = [_concretize(t, i, j) for t in parsed]
        elif "[i]" in key:
            stem = key.split("[")[0]
            for name in names:
                m = re.fullmatch(rf"{stem}_(\d+)", name)
                if m:
                    i = int(m.group(1))
                    terms[name] = [_concretize(t, i) for t in parsed]
        else:
            if key not in names:
                raise ValueError(f"parameter {key!r} not in this family/dimension")
            terms[key] = parsed
    # exact keys override broadcast ones
    for key, formula in formulas.items():
        if "[" not in key and key in names:
            terms[key] = _parse_formula(formula, defaults)
    return ModelSpec(family, k, ad_order=ad_order, terms=terms, response=response)


def load_model_document(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Fit artifacts


def fit_to_payload(state, name=None, seed=None):
    spec = state.spec
    params = {}
    for pname in spec.param_names():
        entries = []
        for block, coef, lam, edf in zip(
            state.blocks[pname],
            state.coefs[pname],
            state.smoothing[pname],
            state.edf[pname],
        ):
            payload = block.to_dict()
            payload["coef"] = coef.tolist()
            payload["smoothing"] = lam
            payload["edf"] = edf
            entries.append(payload)
        params[pname] = entries
    return {
        "format": "cholgauss-fit-v1",
        "name": name or spec.family,
        "family": spec.family,
        "k": spec.dim,
        "ad_order": spec.ad_order,
        "response": list(spec.response),
        "seed": seed,
        "loglik": state.loglik,
        "penalized_loglik": state.penalized_loglik,
        "aic": state.aic,
        "converged": state.converged,
        "iterations": state.iterations,
        "accounting": spec.covariance_accounting(),
        "params": params,
        "messages": list(state.messages),
    }


def fit_from_payload(payload):
    from .basis import BasisBlock

    spec_terms = {}
    blocks = {}
    coefs = {}
    smoothing = {}
    edf = {}
    for pname, entries in payload["params"].items():
        blks, cfs, lams, edfs, specs = [], [], [], [], []
        for entry in entries:
            block = BasisBlock.from_dict(entry)
            blks.append(block)
            specs.append(block.spec)
            cfs.append(np.asarray(entry["coef"]))
            lams.append(entry["smoothing"])
            edfs.append(entry["edf"])
        spec_terms[pname] = specs
        blocks[pname] = blks
        coefs[pname] = cfs
        smoothing[pname] = lams
        edf[pname] = edfs
    spec = ModelSpec(
        payload["family"],
        payload["k"],
        ad_order=payload["ad_order"],
        terms=spec_terms,
        response=payload["response"],
    )
    return FitState(
        spec=spec,
        blocks=blocks,
        coefs=coefs,
        smoothing=smoothing,
        edf=edf,
        loglik=payload["loglik"],
        penalized_loglik=payload["penalized_loglik"],
        aic=payload["aic"],
        converged=payload["converged"],
        iterations=payload["iterations"],
        pll_trace=[],
        messages=list(payload["messages"]),
    )


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_json(path, payload):
    _atomic_write(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_csv(path, frame):
    _atomic_write(path, frame.to_csv(index=False))


# ---------------------------------------------------------------------------
# Canned model specifications


def sim_model_doc(kind, k=3, family="modified", df=10):
    """Model document for the single-covariate simulation studies."""
    formula = f"s(x, df={df})" if kind == "spline" else "x"
    diag = {"modified": "psi", "basic": "lamdiag"}[family]
    return {
        "name": f"{family}-{kind}",
        "family": family,
        "k": k,
        "response": "y[i]",
        "formulas": {
            "mu[i]": formula,
            f"{diag}[i]": formula,
            {"modified": "phi", "basic": "lamoff"}[family] + "[i,j]": formula,
        },
    }


def weather_model_doc(name, k=10, df=8, period=DEFAULT_PERIOD):
    """The six model documents compared on the weather-like analog."""
    mu = f"cyclic(yday, df={df}, period={period}) + cyclic(yday, df={df}, period={period}):mean[i]"
    sd = f"cyclic(yday, df={df}, period={period}) + cyclic(yday, df={df}, period={period}):logsd[i]"
    seasonal = f"cyclic(yday, df={df}, period={period})"
    docs = {
        "basic": {
            "family": "basic",
            "formulas": {"mu[i]": mu, "lamdiag[i]": sd, "lamoff[i,j]": seasonal},
        },
        "modified": {
            "family": "modified",
            "formulas": {"mu[i]": mu, "psi[i]": sd, "phi[i,j]": seasonal},
        },
        "basic_ad5": {
            "family": "basic",
            "ad_order": 5,
            "formulas": {"mu[i]": mu, "lamdiag[i]": sd, "lamoff[i,j]": seasonal},
        },
        "modified_ad5": {
            "family": "modified",
            "ad_order": 5,
            "formulas": {"mu[i]": mu, "psi[i]": sd, "phi[i,j]": seasonal},
        },
        "ar1": {
            "family": "ar1",
            "formulas": {"mu[i]": mu, "sigma[i]": sd, "rho": seasonal},
        },
        "const_corr": {
            "family": "const_corr",
            "formulas": {"mu[i]": mu, "sigma[i]": sd, "rho[i,j]": "1"},
        },
    }
    doc = docs[name]
    doc.update({"name": name, "k": k, "response": "obs[i]"})
    return doc


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args):
    outdir = args.out
    os.makedirs(outdir, exist_ok=True)
    if args.kind == "weather":
        frame = generate_weather_analog(n=args.n or 1798, seed=args.seed)
        _write_csv(os.path.join(outdir, "weather.csv"), frame)
        print(os.path.join(outdir, "weather.csv"))
        return 0
    cfg = SimConfig(n=args.n or 5000, k=args.k, alpha=args.alpha, seed=args.seed)
    frame = generate(cfg)
    _write_csv(os.path.join(outdir, "data.csv"), frame)
    grid = np.linspace(-1.0, 1.0, args.grid)
    mu, psi, phi = true_params(grid, cfg)
    truth = pd.DataFrame({"x": grid})
    for i in range(cfg.k):
        truth[f"mu_{i + 1}"] = mu[:, i]
    for i in range(cfg.k):
        truth[f"psi_{i + 1}"] = psi[:, i]
    from .covparam import pair_order

    pi, pj = pair_order(cfg.k)
    for idx, (i, j) in enumerate(zip(pi, pj)):
        truth[f"phi_{i + 1}_{j + 1}"] = phi[:, idx]
    _write_csv(os.path.join(outdir, "truth.csv"), truth)
    print(os.path.join(outdir, "data.csv"))
    print(os.path.join(outdir, "truth.csv"))
    return 0


def cmd_describe(args):
    doc = load_model_document(args.spec)
    if args.k:
        doc["k"] = args.k
    spec = parse_model_document(doc)
    payload = {
        "name": doc.get("name", spec.family),
        "family": spec.family,
        "k": spec.dim,
        "ad_order": spec.ad_order,
        "n_distributional_parameters": len(spec.param_names())
        + spec.covariance_accounting()["zero"],
        "accounting": spec.covariance_accounting(),
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        _atomic_write(args.out, text + "\n")
    print(text)
    return 0


def _fit_options_from_args(args):
    opts = FitOptions()
    if args.smoothing is not None:
        if args.smoothing == "aic":
            opts.smoothing = "aic"
        else:
            opts.smoothing = float(args.smoothing)
    if args.max_outer:
        opts.max_outer = args.max_outer
    return opts


def cmd_fit(args):
    doc = load_model_document(args.spec)
    if args.family:
        doc["family"] = args.family
    if args.ad_order is not None:
        doc["ad_order"] = args.ad_order
    if args.k:
        doc["k"] = args.k
    spec = parse_model_document(doc)
    data = pd.read_csv(args.input)
    try:
        state = fit_pml(spec, data, _fit_options_from_args(args))
    except ConvergenceError as exc:
        _write_json(args.out, {"error": "convergence-failure", "detail": str(exc)})
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 1
    payload = fit_to_payload(state, name=doc.get("name"), seed=args.seed)
    _write_json(args.out, payload)
    print(args.out)
    return 0


def _prediction_frame(fit, data):
    preds = predict(fit, data, warn=False)
    k = fit.spec.dim
    rows = []
    for dist in preds:
        rec = {"row": dist.row}
        for i in range(k):
            rec[f"mu_{i + 1}"] = dist.mu[i]
        for i in range(k):
            for j in range(i, k):
                rec[f"sigma_{i + 1}_{j + 1}"] = dist.sigma.entries[i, j]
        rows.append(rec)
    return pd.DataFrame.from_records(rows)


def cmd_predict(args):
    with open(args.fit) as fh:
        fit = fit_from_payload(json.load(fh))
    data = pd.read_csv(args.input)
    _require_columns(data, fit)
    frame = _prediction_frame(fit, data)
    _write_csv(args.out, frame)
    print(args.out)
    return 0


def _require_columns(data, fit):
    needed = set(fit.spec.response)
    for blocks in fit.blocks.values():
        for block in blocks:
            if block.spec.covariate:
                needed.add(block.spec.covariate)
            if block.spec.by:
                needed.add(block.spec.by)
    missing = sorted(c for c in needed if c not in data.columns)
    if missing:
        raise SystemExit(f"input is missing required column(s): {', '.join(missing)}")


def _group_labels(data, column):
    if column is None:
        if "date" in data.columns:
            ym = pd.to_datetime(data["date"]).dt.strftime("%Y-%m")
            return ym.to_numpy(), "ym"
        return None, None
    if column == "date" or np.issubdtype(data[column].dtype, np.datetime64):
        ym = pd.to_datetime(data[column]).dt.strftime("%Y-%m")
        return ym.to_numpy(), "ym"
    return data[column].to_numpy(), column


def cmd_score(args):
    with open(args.fit) as fh:
        fit = fit_from_payload(json.load(fh))
    data = pd.read_csv(args.input)
    _require_columns(data, fit)
    group, _ = _group_labels(data, args.group_col)
    panel = score_rows(fit, data, vs_m=args.vs_draws, seed=args.seed, group=group)
    pred = _prediction_frame(fit, data)
    merged = pred.merge(panel, on="row")
    _write_csv(args.out, merged)
    if group is not None:
        _write_csv(
            os.path.splitext(args.out)[0] + "_groups.csv",
            aggregate_scores(panel, by="group"),
        )
    print(args.out)
    return 0


def cmd_cv(args):
    data = pd.read_csv(args.input)
    os.makedirs(args.out, exist_ok=True)
    group, group_name = _group_labels(data, args.group_col)
    if group is not None:
        data = data.assign(_group=group)
    specs = []
    for path in args.spec:
        doc = load_model_document(path)
        specs.append((doc.get("name") or os.path.basename(path), doc))
    panels = {}
    failures = {}
    for name, doc in specs:
        spec = parse_model_document(doc)
        result = kfold_cv(
            spec,
            data,
            k_folds=args.folds,
            seed=args.seed,
            fit_options=_fit_options_from_args(args),
            vs_m=args.vs_draws,
            group="_group" if group is not None else None,
        )
        result.panel["model"] = name
        panels[name] = result.panel
        if result.failures:
            failures[name] = result.failures
    merged = pd.concat(panels.values(), ignore_index=True)
    _write_csv(os.path.join(args.out, "cv_scores.csv"), merged)
    agg_keys = ["model", "fold"] + (["group"] if group is not None else [])
    per_fold = merged.groupby(agg_keys, as_index=False)[
        ["dss", "variogram", "loglik"]
    ].mean()
    _write_csv(os.path.join(args.out, "cv_aggregates.csv"), per_fold)
    reference = args.reference or specs[0][0]
    if reference not in panels:
        raise SystemExit(f"reference model {reference!r} not among the fitted specs")
    diffs = _reference_differences(merged, reference, group is not None)
    _write_csv(os.path.join(args.out, "cv_differences.csv"), diffs)
    if failures:
        _write_json(os.path.join(args.out, "cv_failures.json"), failures)
    print(os.path.join(args.out, "cv_scores.csv"))
    return 0


def _reference_differences(merged, reference, grouped):
    keys = ["group"] if grouped else ["fold"]
    cell = merged.groupby(["model"] + keys, as_index=False)[
        ["dss", "variogram"]
    ].mean()
    ref = cell[cell["model"] == reference].set_index(keys)
    rows = []
    for model in cell["model"].unique():
        sub = cell[cell["model"] == model].set_index(keys)
        joined = sub.join(ref, lsuffix="_model", rsuffix="_ref")
        for key, row in joined.iterrows():
            rec = {
                "model": model,
                "reference": reference,
                "dss_improvement": row["dss_ref"] - row["dss_model"],
                "variogram_improvement": row["variogram_ref"] - row["variogram_model"],
            }
            rec["group" if grouped else "fold"] = key
            rows.append(rec)
    frame = pd.DataFrame.from_records(
        rows,
        columns=["model", "reference", "dss_improvement",
                 "variogram_improvement", "group" if grouped else "fold"],
    )
    return frame


# ---------------------------------------------------------------------------
# Experiment drivers


def _rmse_against_truth(fit, cfg, n_eval=10000, seed=12345):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1.0, 1.0, n_eval)
    eta = fit.predict_eta({"x": xs}, warn=False)
    mu, psi, phi = true_params(xs, cfg)
    from .covparam import pair_order

    pi, pj = pair_order(cfg.k)
    out = {}
    for i in range(cfg.k):
        out[f"mu_{i + 1}"] = float(
            np.sqrt(np.mean((eta[f"mu_{i + 1}"] - mu[:, i]) ** 2))
        )
        est_psi = np.exp(eta[f"psi_{i + 1}"])
        out[f"psi_{i + 1}"] = float(np.sqrt(np.mean((est_psi - psi[:, i]) ** 2)))
    for idx, (i, j) in enumerate(zip(pi, pj)):
        name = f"phi_{i + 1}_{j + 1}"
        out[name] = float(np.sqrt(np.mean((eta[name] - phi[:, idx]) ** 2)))
    return out


def _run_sim_fit(task):
    """One (rep, n, k, alpha, spec_kind) simulation fit; returns RMSE rows."""
    rep, n, k, alpha, spec_kind, seed = task
    cfg = SimConfig(n=n, k=k, alpha=alpha, seed=seed)
    frame = generate(cfg)
    doc = sim_model_doc(spec_kind, k=k)
    spec = parse_model_document(doc)
    try:
        fit = fit_pml(spec, frame, FitOptions())
    except Exception as exc:  # noqa: BLE001 - recorded, run continues
        return [
            {
                "rep": rep,
                "n": n,
                "k": k,
                "alpha": alpha,
                "spec": spec_kind,
                "param": "__error__",
                "rmse": float("nan"),
                "error": str(exc),
            }
        ]
    rmse = _rmse_against_truth(fit, cfg)
    return [
        {
            "rep": rep,
            "n": n,
            "k": k,
            "alpha": alpha,
            "spec": spec_kind,
            "param": param,
            "rmse": val,
            "error": "",
        }
        for param, val in rmse.items()
    ]


def _pool_map(fn, tasks, workers):
    if workers <= 1:
        out = []
        for task in tasks:
            out.append(fn(task))
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _experiment_rmse_vs_n(args, outdir):
    ns = [int(v) for v in (args.n_list or "500,5000").split(",")]
    if args.paper_scale:
        ns = [100, 500, 1000, 5000, 10000]
    tasks = [
        (rep, n, 3, 1.0, "spline", args.seed + 17 * rep + n)
        for rep in range(args.reps)
        for n in ns
    ]
    rows = [r for chunk in _pool_map(_run_sim_fit, tasks, args.workers) for r in chunk]
    frame = pd.DataFrame.from_records(rows)
    _write_csv(os.path.join(outdir, "rmse_vs_n.csv"), frame)
    med = (
        frame[frame["param"] != "__error__"]
        .groupby(["n", "param"], as_index=False)["rmse"]
        .median()
    )
    _write_csv(os.path.join(outdir, "rmse_vs_n_median.csv"), med)


def _experiment_misspec(args, outdir):
    alphas = [float(v) for v in (args.alpha_list or "0,0.1,0.25,0.5,1,2").split(",")]
    tasks = [
        (rep, args.n or 5000, 3, alpha, kind, args.seed + 31 * rep + int(alpha * 100))
        for rep in range(args.reps)
        for alpha in alphas
        for kind in ("spline", "linear")
    ]
    rows = [r for chunk in _pool_map(_run_sim_fit, tasks, args.workers) for r in chunk]
    frame = pd.DataFrame.from_records(rows)
    _write_csv(os.path.join(outdir, "misspec_alpha.csv"), frame)
    med = (
        frame[frame["param"] != "__error__"]
        .groupby(["alpha", "spec", "param"], as_index=False)["rmse"]
        .median()
    )
    _write_csv(os.path.join(outdir, "misspec_alpha_median.csv"), med)


def _experiment_dim_sweep(args, outdir):
    ks = [int(v) for v in (args.k_list or "3,5,10,15").split(",")]
    for k in ks:
        if k not in SUPPORTED_DIMS:
            raise SystemExit(f"dimension {k} unsupported; choose from {SUPPORTED_DIMS}")
    tasks = [
        (rep, args.n or 5000, k, 1.0, "spline", args.seed + 13 * rep + k)
        for rep in range(args.reps)
        for k in ks
    ]
    rows = [r for chunk in _pool_map(_run_sim_fit, tasks, args.workers) for r in chunk]
    frame = pd.DataFrame.from_records(rows)
    _write_csv(os.path.join(outdir, "dim_sweep.csv"), frame)
    med = (
        frame[frame["param"] != "__error__"]
        .groupby(["k", "param"], as_index=False)["rmse"]
        .median()
    )
    _write_csv(os.path.join(outdir, "dim_sweep_median.csv"), med)


def _experiment_model_compare(args, outdir):
    data = generate_weather_analog(n=args.n or 1798, seed=args.seed)
    group, _ = _group_labels(data, "date")
    data = data.assign(_group=group)
    models = (args.models or "basic,modified,basic_ad5,modified_ad5,ar1,const_corr").split(",")
    panels = []
    failures = {}
    for name in models:
        doc = weather_model_doc(name.strip(), k=10)
        spec = parse_model_document(doc)
        result = kfold_cv(
            spec,
            data,
            k_folds=args.folds,
            seed=args.seed,
            fit_options=FitOptions(),
            vs_m=args.vs_draws,
            group="_group",
        )
        result.panel["model"] = name
        panels.append(result.panel)
        if result.failures:
            failures[name] = result.failures
    merged = pd.concat(panels, ignore_index=True)
    _write_csv(os.path.join(outdir, "model_compare_scores.csv"), merged)
    cells = merged.groupby(["model", "group"], as_index=False)[
        ["dss", "variogram", "loglik"]
    ].mean()
    _write_csv(os.path.join(outdir, "model_compare_groups.csv"), cells)
    diffs = _reference_differences(merged, "const_corr", grouped=True)
    _write_csv(os.path.join(outdir, "model_compare_differences.csv"), diffs)
    overall = merged.groupby("model", as_index=False)[
        ["dss", "variogram", "loglik"]
    ].mean()
    _write_csv(os.path.join(outdir, "model_compare_overall.csv"), overall)
    if failures:
        _write_json(os.path.join(outdir, "model_compare_failures.json"), failures)


def cmd_experiment(args):
    outdir = args.out
    os.makedirs(outdir, exist_ok=True)
    drivers = {
        "rmse_vs_n": _experiment_rmse_vs_n,
        "misspec_alpha": _experiment_misspec,
        "dim_sweep": _experiment_dim_sweep,
        "model_compare": _experiment_model_compare,
    }
    if args.name not in drivers:
        raise SystemExit(
            f"unknown experiment {args.name!r}; choose from {sorted(drivers)}"
        )
    drivers[args.name](args, outdir)
    print(outdir)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _default_workers():
    env = os.environ.get("CHOLGAUSS_WORKERS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cholgauss",
        description="Multivariate Gaussian distributional regression with "
        "Cholesky-parameterized covariances",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic data")
    p.add_argument("--kind", choices=["trivariate", "weather"], default="trivariate")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=201)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("describe", help="parameter accounting for a model document")
    p.add_argument("--spec", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("fit", help="fit a model document to CSV data")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", default=None)
    p.add_argument("--ad-order", dest="ad_order", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--smoothing", default=None, help='"aic" or a fixed value')
    p.add_argument("--max-outer", dest="max_outer", type=int, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict (mu, Sigma) at new covariates")
    p.add_argument("--fit", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="score a fit on a dataset")
    p.add_argument("--fit", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--group-col", dest="group_col", default=None)
    p.add_argument("--vs-draws", dest="vs_draws", type=int, default=1000)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("cv", help="cross-validated model comparison")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reference", default=None)
    p.add_argument("--group-col", dest="group_col", default=None)
    p.add_argument("--vs-draws", dest="vs_draws", type=int, default=1000)
    p.add_argument("--smoothing", default=None)
    p.add_argument("--max-outer", dest="max_outer", type=int, default=None)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("experiment", help="run a canned study")
    p.add_argument("--name", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--n-list", dest="n_list", default=None)
    p.add_argument("--alpha-list", dest="alpha_list", default=None)
    p.add_argument("--k-list", dest="k_list", default=None)
    p.add_argument("--models", default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--vs-draws", dest="vs_draws", type=int, default=200)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--paper-scale", dest="paper_scale", action="store_true")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", None) is None:
        args.workers = _default_workers()
    try:
        return args.func(args)
    except (ValueError, ConvergenceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
