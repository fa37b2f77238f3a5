"""FastAPI endpoints over trace generation, runs, fits, and closed forms.

Every endpoint is a stateless wrapper: parse the body, call the
corresponding library function, map domain ValueErrors to 400.
"""

import io
from dataclasses import replace

import numpy as np
from fastapi import FastAPI, HTTPException

from cachelab import __version__, analytic, experiment
from cachelab.hazard import fit_gpd_mle
from cachelab.traffic import Mmpp, format_trace_csv
from cachelab.service import schemas

app = FastAPI(title="cachelab", version=__version__)


def _domain_error(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/traces/generate", response_model=schemas.GenerateResponse)
def generate_trace(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
    try:
        config = experiment.parse_config(req.config)
        if config.model == "trace":
            raise experiment.ConfigError(
                "[traffic.model] cannot generate from trace traffic")
        if req.seed is not None:
            config = replace(config, seed=req.seed)
        seed = experiment.replication_seed(config.seed, 0)
        catalog = experiment.build_catalog(config, seed)
        trace = experiment.make_trace(config, catalog, seed)
    except ValueError as exc:
        raise _domain_error(exc) from exc
    return schemas.GenerateResponse(
        trace_csv=format_trace_csv(trace, catalog, req.header),
        n=trace.n, requests=trace.k, horizon=trace.horizon)


@app.post("/experiments/run", response_model=schemas.RunResponse)
def run(req: schemas.RunRequest) -> schemas.RunResponse:
    try:
        config = experiment.parse_config(req.config)
        if req.seed is not None:
            config = replace(config, seed=req.seed)
        rows = experiment.run_experiment(config)
        summary = experiment.summarize(rows)
    except ValueError as exc:
        raise _domain_error(exc) from exc
    return schemas.RunResponse(
        results_csv=experiment.format_results_csv(rows),
        summary_csv=experiment.format_summary_csv(summary),
        summary_text=experiment.format_summary(summary),
        rows=len(rows), out_dir=config.out_dir)


@app.post("/fits/gpd", response_model=schemas.FitGpdResponse)
def fit_gpd(req: schemas.FitGpdRequest) -> schemas.FitGpdResponse:
    try:
        fit = fit_gpd_mle(np.asarray(req.samples, dtype=float))
    except ValueError as exc:
        raise _domain_error(exc) from exc
    return schemas.FitGpdResponse(shape=fit.shape, scale=fit.scale,
                                  log_likelihood=fit.log_likelihood,
                                  n_samples=fit.n_samples,
                                  converged=fit.converged)


@app.post("/fits/trace", response_model=schemas.FitTraceResponse)
def fit_trace(req: schemas.FitTraceRequest) -> schemas.FitTraceResponse:
    try:
        fit = experiment.fit_real_trace(io.StringIO(req.trace_csv),
                                        req.min_requests)
    except ValueError as exc:
        raise _domain_error(exc) from exc
    objects = [schemas.ObjectFit(object_id=r.object_id, requests=r.requests,
                                 shape=r.shape, scale=r.scale,
                                 converged=r.converged)
               for r in fit.rows]
    return schemas.FitTraceResponse(
        objects=objects, dropped_short=fit.dropped_short,
        dropped_degenerate=fit.dropped_degenerate, n=fit.catalog.n,
        requests=fit.trace.k, report_csv=experiment.format_fit_report(fit))


@app.post("/summaries", response_model=schemas.SummarizeResponse)
def summarize(req: schemas.SummarizeRequest) -> schemas.SummarizeResponse:
    try:
        rows = experiment.load_results_csv(io.StringIO(req.results_csv))
        summary = experiment.summarize(rows)
    except ValueError as exc:
        raise _domain_error(exc) from exc
    return schemas.SummarizeResponse(
        summary_text=experiment.format_summary(summary),
        summary_csv=experiment.format_summary_csv(summary))


@app.post("/analytic/poisson", response_model=schemas.AnalyticResponse)
def analytic_poisson(req: schemas.PoissonRequest) -> schemas.AnalyticResponse:
    try:
        res = analytic.poisson_hr(req.rates, req.cache_size)
    except ValueError as exc:
        raise _domain_error(exc) from exc
    return schemas.AnalyticResponse(hit_prob=res.hit_prob, hit_rate=res.hit_rate)


@app.post("/analytic/onoff", response_model=schemas.AnalyticResponse)
def analytic_onoff(req: schemas.OnOffRequest) -> schemas.AnalyticResponse:
    try:
        if req.form == "common-rho":
            if req.rho is None:
                raise ValueError("form common-rho needs rho")
            res = analytic.onoff_hr_common_rho(req.rates, req.rho, req.cache_size)
        elif req.form in ("exact", "recursive"):
            if req.on_prob is None:
                raise ValueError(f"form {req.form} needs on_prob")
            fn = (analytic.onoff_hr_exact if req.form == "exact"
                  else analytic.onoff_hr_recursive)
            res = fn(req.rates, req.on_prob, req.cache_size)
        else:
            raise ValueError(f"unknown form {req.form!r}; "
                             "expected exact, recursive, or common-rho")
    except ValueError as exc:
        raise _domain_error(exc) from exc
    return schemas.AnalyticResponse(hit_prob=res.hit_prob, hit_rate=res.hit_rate)


@app.post("/analytic/mmpp", response_model=schemas.AnalyticResponse)
def analytic_mmpp(req: schemas.MmppRequest) -> schemas.AnalyticResponse:
    try:
        model = Mmpp(np.asarray(req.generator, dtype=float),
                     np.asarray(req.state_rates, dtype=float))
        res = analytic.mmpp_hr(model, req.cache_size)
    except ValueError as exc:
        raise _domain_error(exc) from exc
    return schemas.AnalyticResponse(hit_prob=res.hit_prob, hit_rate=res.hit_rate)
