"""Command-line harness: simulation experiments, batch privatize/estimate,
and the survey service runner.

Every experiment command takes --seed/--reps/--out/--threads, writes CSV
results plus a rendered figure into the output directory, and drops a
manifest recording the exact configuration.  Outputs are byte-identical
across runs and thread counts for a fixed seed.

Exit codes: 0 success, 2 validation problem, 3 runtime failure.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np
from scipy.stats import norm

from . import __version__
from .core import NoiseModel, PrivatizedRecord, canonical_partition
from .estimation import NoData, npmle, npmle_case1_arrays, linear_functional
from .mechanisms import batch_privatize, config_from_dict
from .regression import (
    IntervalRegressionDataset,
    KNNLearner,
    OLSLearner,
    fit_interval_regression,
)


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise click.UsageError(f"bad numeric list {text!r}: {exc}") from exc


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in _parse_floats(text)]


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, params: dict):
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
    doc = {
        "command": command,
        "params": params,
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _run_indexed(fn, n_jobs: int, threads: int) -> list:
    """Run fn(i) for i in range(n_jobs); results ordered by index so the
    reduction is identical for any thread count."""
    if threads <= 1:
        return [fn(i) for i in range(n_jobs)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_jobs)))


@click.group()
def cli():
    """Privacy-preserving range collection toolkit."""


# ---------------------------------------------------------------------------
# moment-exp


def _moment_rep(n: int, rate: float, seed_seq) -> dict:
    rng = np.random.default_rng(seed_seq)
    T = 2.0 * n ** (1.0 / 3.0)
    y = 0.5 + rng.standard_normal(n)
    k = int(round(rate * n))
    if k:
        idx = rng.choice(n, size=k, replace=False)
        y[idx] = 999.0
    u = rng.uniform(-T, T, size=n)
    delta = (y <= u).astype(float)
    out = {}
    out[("example2", "E(Y)")] = float(
        np.mean(delta * (2 * u - T) + (1 - delta) * (2 * u + T)))
    # functional form of the same trick for the second moment:
    # E(phi(Y)) = phi(T) - (b - a) * E[phi'(U) 1{Y <= U}] for U ~ Unif[-T, T]
    out[("example2", "E(Y^2)")] = float(T * T - 2 * T * np.mean(2 * u * delta))
    cdf = npmle_case1_arrays(u, delta).cdf
    out[("npmle", "E(Y)")] = cdf.mean()
    out[("npmle", "E(Y^2)")] = linear_functional(cdf, lambda t: t * t)
    out[("raw-mean", "E(Y)")] = float(np.mean(y))
    out[("raw-median", "E(Y)")] = float(np.median(y))
    out[("raw-mean", "E(Y^2)")] = float(np.mean(y * y))
    out[("raw-median", "E(Y^2)")] = float(np.median(y * y))
    return out


@cli.command("moment-exp")
@click.option("--seed", default=0, show_default=True)
@click.option("--reps", default=1000, show_default=True)
@click.option("--out", default="moment-exp-out", show_default=True)
@click.option("--threads", default=1, show_default=True)
@click.option("--sizes", default="100,1000", show_default=True)
@click.option("--outliers", default="0,0.01,0.05", show_default=True)
def moment_exp(seed, reps, out, threads, sizes, outliers):
    """Moment-estimation error table: closed-form vs NPMLE vs raw baselines
    under outlier contamination."""
    sizes = _parse_ints(sizes)
    rates = _parse_floats(outliers)
    outdir = _outdir(out)
    truth = {"E(Y)": 0.5, "E(Y^2)": 1.25}
    rows = []
    for n in sizes:
        for rate in rates:
            children = np.random.SeedSequence(
                [seed, n, int(round(rate * 1000))]).spawn(reps)
            reps_out = _run_indexed(
                lambda i, n=n, rate=rate, ch=children: _moment_rep(n, rate, ch[i]),
                reps, threads)
            for method, target in sorted({k for r in reps_out for k in r}):
                errs = np.array([abs(r[(method, target)] - truth[target])
                                 for r in reps_out])
                rows.append({
                    "n": n, "outlier_rate": rate, "method": method,
                    "target": target,
                    "mae": round(float(np.mean(errs)), 10),
                    "mae_se": round(float(np.std(errs, ddof=1)
                                          / math.sqrt(reps)), 10),
                })
    _write_csv(outdir / "moment.csv",
               ["n", "outlier_rate", "method", "target", "mae", "mae_se"], rows)
    from .reports import save_moment_figure

    save_moment_figure(rows, outdir / "moment.png")
    _write_manifest(outdir, "moment-exp", {
        "seed": seed, "reps": reps, "sizes": sizes, "outliers": rates})
    width = max(len(r["method"]) for r in rows) + 2
    click.echo(f"{'n':>6} {'outliers':>9} {'method':<{width}} "
               f"{'target':<8} {'MAE':>10}")
    for r in rows:
        click.echo(f"{r['n']:>6} {r['outlier_rate']:>9g} "
                   f"{r['method']:<{width}} {r['target']:<8} {r['mae']:>10.4f}")


# ---------------------------------------------------------------------------
# regression-exp


def _linear_records(rng, n=200, scale=5.0):
    x = rng.standard_normal(n)
    y = x + rng.standard_normal(n)
    u = rng.logistic(0.0, scale, size=n)
    records = []
    for i in range(n):
        part = canonical_partition([u[i]])
        records.append(PrivatizedRecord(
            anchors=(float(u[i]),), topology="canonical", partition=part,
            choice=1 if y[i] <= u[i] else 2, features=(float(x[i]),)))
    return x, y, records


def _quadratic_records(rng, n=200, scale=5.0):
    x = rng.standard_normal(n)
    f = x ** 2 - 2 * x + 3
    y = f + rng.standard_normal(n)
    l1 = rng.logistic(0.0, scale, size=n)
    l2 = rng.logistic(0.0, scale, size=n)
    u, v = np.minimum(l1, l2), np.maximum(l1, l2)
    records = []
    for i in range(n):
        part = canonical_partition([u[i], v[i]])
        choice = 1 if y[i] <= u[i] else (2 if y[i] <= v[i] else 3)
        records.append(PrivatizedRecord(
            anchors=(float(u[i]), float(v[i])), topology="canonical",
            partition=part, choice=choice, features=(float(x[i]),)))
    return x, y, records


def _regression_rep(template: str, seed_seq, max_iter: int):
    rng = np.random.default_rng(seed_seq)
    if template == "linear":
        _, _, records = _linear_records(rng)
        learner = OLSLearner()
        truth = lambda t: t  # noqa: E731
    else:
        _, _, records = _quadratic_records(rng)
        learner = KNNLearner(k=10)
        truth = lambda t: t ** 2 - 2 * t + 3  # noqa: E731
    x_test = rng.standard_normal(1000)
    data = IntervalRegressionDataset.from_records(records)
    trace = []

    def on_iter(it, y_tilde, f_hat, model):
        preds = np.asarray(learner.predict(model, x_test[:, None]))
        mse = float(np.mean((preds - truth(x_test)) ** 2))
        beta = float(model[1]) if template == "linear" else float("nan")
        trace.append({"iteration": it, "mse": round(mse, 10),
                      "beta": round(beta, 10) if template == "linear" else ""})

    report = fit_interval_regression(
        data, learner, NoiseModel("gaussian", 1.0), max_iter=max_iter,
        callback=on_iter)
    final = {
        "iterations": report.iterations,
        "converged": report.converged,
        "final_mse": trace[-1]["mse"],
    }
    if template == "linear":
        final["beta_hat"] = trace[-1]["beta"]
    return trace, final


@cli.command("regression-exp")
@click.option("--template", type=click.Choice(["linear", "quadratic"]),
              default="linear", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--reps", default=50, show_default=True)
@click.option("--out", default="regression-exp-out", show_default=True)
@click.option("--threads", default=1, show_default=True)
@click.option("--max-iter", default=25, show_default=True)
def regression_exp(template, seed, reps, out, threads, max_iter):
    """Iterative interval-regression experiment with per-iteration traces."""
    outdir = _outdir(out)
    children = np.random.SeedSequence([seed, 1]).spawn(reps)
    results = _run_indexed(
        lambda i: _regression_rep(template, children[i], max_iter),
        reps, threads)
    trace_rows, final_rows = [], []
    for i, (trace, final) in enumerate(results):
        for t in trace:
            trace_rows.append({"seed_index": i, **t})
        final_rows.append({"seed_index": i, **final})
    _write_csv(outdir / "trace.csv",
               ["seed_index", "iteration", "mse", "beta"], trace_rows)
    final_fields = ["seed_index", "iterations", "converged", "final_mse"]
    if template == "linear":
        final_fields.append("beta_hat")
    _write_csv(outdir / "final.csv", final_fields, final_rows)
    from .reports import save_trace_figure

    save_trace_figure(
        [[(t["iteration"], t["mse"]) for t in trace] for trace, _ in results],
        outdir / "regression.png")
    _write_manifest(outdir, "regression-exp", {
        "template": template, "seed": seed, "reps": reps,
        "max_iter": max_iter})
    med_mse = sorted(f["final_mse"] for f in final_rows)[reps // 2]
    click.echo(f"{template}: median final MSE {med_mse:.4f} over {reps} seeds")


# ---------------------------------------------------------------------------
# tradeoff


def _tradeoff_rep(scale: float, seed_seq, max_iter: int):
    rng = np.random.default_rng(seed_seq)
    x = rng.standard_normal(200)
    y = x + rng.standard_normal(200)
    u = rng.logistic(0.0, scale, size=200)
    f_marginal = norm.cdf(u, loc=0.0, scale=math.sqrt(2.0))
    tau = float(np.mean(f_marginal ** 2 + (1 - f_marginal) ** 2))
    records = []
    for i in range(200):
        part = canonical_partition([u[i]])
        records.append(PrivatizedRecord(
            anchors=(float(u[i]),), topology="canonical", partition=part,
            choice=1 if y[i] <= u[i] else 2, features=(float(x[i]),)))
    report = fit_interval_regression(
        IntervalRegressionDataset.from_records(records), OLSLearner(),
        NoiseModel("gaussian", 1.0), max_iter=max_iter)
    x_test = rng.standard_normal(1000)
    preds = np.asarray(OLSLearner().predict(report.model, x_test[:, None]))
    mse = float(np.mean((preds - x_test) ** 2))
    return tau, mse


@cli.command("tradeoff")
@click.option("--scales", default="0.1,0.3,0.5,1,3,5,10,20,30",
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--reps", default=20, show_default=True)
@click.option("--out", default="tradeoff-out", show_default=True)
@click.option("--threads", default=1, show_default=True)
@click.option("--max-iter", default=25, show_default=True)
def tradeoff(scales, seed, reps, out, threads, max_iter):
    """Sweep anchor scales: estimated coverage against prediction error."""
    scale_list = _parse_floats(scales)
    if len(scale_list) < 2:
        raise click.UsageError("need at least two scales")
    outdir = _outdir(out)
    rows = []
    for scale in scale_list:
        children = np.random.SeedSequence(
            [seed, int(scale * 1000)]).spawn(reps)
        results = _run_indexed(
            lambda i, s=scale, ch=children: _tradeoff_rep(s, ch[i], max_iter),
            reps, threads)
        taus = np.array([r[0] for r in results])
        mses = np.array([r[1] for r in results])
        rows.append({
            "scale": scale,
            "coverage": round(float(np.mean(taus)), 10),
            "coverage_se": round(float(np.std(taus, ddof=1)
                                       / math.sqrt(reps)), 10),
            "mse": round(float(np.mean(mses)), 10),
            "mse_se": round(float(np.std(mses, ddof=1) / math.sqrt(reps)), 10),
        })
    _write_csv(outdir / "tradeoff.csv",
               ["scale", "coverage", "coverage_se", "mse", "mse_se"], rows)
    from .reports import save_tradeoff_figure

    save_tradeoff_figure(rows, outdir / "tradeoff.png")
    _write_manifest(outdir, "tradeoff", {
        "seed": seed, "reps": reps, "scales": scale_list,
        "max_iter": max_iter})
    for r in rows:
        click.echo(f"scale {r['scale']:>6g}: coverage "
                   f"{r['coverage']:.3f}±{r['coverage_se']:.3f}  "
                   f"MSE {r['mse']:.4f}±{r['mse_se']:.4f}")


# ---------------------------------------------------------------------------
# privatize / estimate / serve


@cli.command("privatize")
@click.option("--input", "input_path", required=True)
@click.option("--column", required=True)
@click.option("--config", "config_path", required=True)
@click.option("--features", default="")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True)
def privatize_cmd(input_path, column, config_path, features, seed, out):
    """Privatize one CSV column into JSON-lines range records."""
    try:
        cfg = config_from_dict(json.loads(Path(config_path).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise click.UsageError(f"bad mechanism config: {exc}") from exc
    feat_cols = [c for c in features.split(",") if c.strip()]
    values, feats = [], []
    try:
        with open(input_path, newline="") as fh:
            reader = csv.DictReader(fh)
            for ln, row in enumerate(reader, start=2):
                try:
                    values.append(float(row[column]))
                    if feat_cols:
                        feats.append([float(row[c]) for c in feat_cols])
                except (KeyError, ValueError) as exc:
                    raise click.UsageError(
                        f"{input_path}:{ln}: {exc}") from exc
    except OSError as exc:
        raise click.UsageError(str(exc)) from exc
    if not values:
        raise click.UsageError("input contains no rows")
    records = batch_privatize(values, cfg, seed,
                              features=feats if feat_cols else None)
    with open(out, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    click.echo(f"wrote {len(records)} records to {out}")


@cli.command("estimate")
@click.option("--input", "input_path", required=True)
@click.option("--out", default="estimate-out", show_default=True)
def estimate_cmd(input_path, out):
    """Distribution estimate (NPMLE) from JSON-lines range records."""
    from .core import read_records

    outdir = _outdir(out)
    try:
        with open(input_path) as fh:
            records = read_records(fh, skip_null=True)
    except OSError as exc:
        raise click.UsageError(str(exc)) from exc
    except ValueError as exc:
        raise click.UsageError(f"{input_path}: {exc}") from exc
    try:
        result = npmle(records)
    except NoData as exc:
        raise click.UsageError(str(exc)) from exc
    doc = result.to_dict()
    doc["mean"] = result.cdf.mean()
    (outdir / "estimate.json").write_text(json.dumps(doc, indent=2) + "\n")
    _write_csv(outdir / "cdf.csv", ["x", "F"],
               [{"x": x, "F": F} for x, F in result.cdf.jumps])
    from .reports import save_cdf_figure

    save_cdf_figure(result.cdf.jumps, outdir / "cdf.png")
    click.echo(f"NPMLE over {len(records)} records: mean {doc['mean']:.4f}, "
               f"{result.iterations} iterations")


@cli.command("serve")
@click.option("--log", "log_path", default="survey-events.jsonl",
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True)
def serve_cmd(log_path, seed, host, port):
    """Run the survey collection service until interrupted."""
    try:
        import uvicorn
    except ImportError as exc:  # pragma: no cover
        raise click.UsageError(
            "uvicorn is required: pip install rangecollect[serve]") from exc
    from .service import SurveyService, create_app

    service = SurveyService(log_path=log_path, seed=seed)
    app = create_app(service)
    uvicorn.run(app, host=host, port=port)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:  # --help etc.
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except KeyboardInterrupt:
        sys.exit(3)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(3)
    sys.exit(0)


if __name__ == "__main__":
    main()
