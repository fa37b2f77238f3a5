"""Request and response bodies for the service endpoints."""

from typing import List, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateRequest(BaseModel):
    """Generate one trace from a config's traffic/sizes sections.

    ``seed`` overrides the config's master seed; the trace uses the
    replication-0 stream, so it matches the first replication of a run
    with the same seed.
    """

    config: str
    seed: Optional[int] = None
    header: bool = True


class GenerateResponse(BaseModel):
    trace_csv: str
    n: int
    requests: int
    horizon: float


class RunRequest(BaseModel):
    config: str
    seed: Optional[int] = None


class RunResponse(BaseModel):
    results_csv: str
    summary_csv: str
    summary_text: str
    rows: int
    out_dir: str


class FitGpdRequest(BaseModel):
    samples: List[float] = Field(min_length=2)


class FitGpdResponse(BaseModel):
    shape: float
    scale: float
    log_likelihood: float
    n_samples: int
    converged: bool


class FitTraceRequest(BaseModel):
    trace_csv: str
    min_requests: int = 100


class ObjectFit(BaseModel):
    object_id: str
    requests: int
    shape: float
    scale: float
    converged: bool


class FitTraceResponse(BaseModel):
    objects: List[ObjectFit]
    dropped_short: int
    dropped_degenerate: int
    n: int
    requests: int
    report_csv: str


class SummarizeRequest(BaseModel):
    results_csv: str


class SummarizeResponse(BaseModel):
    summary_text: str
    summary_csv: str


class AnalyticResponse(BaseModel):
    hit_prob: float
    hit_rate: float


class PoissonRequest(BaseModel):
    rates: List[float] = Field(min_length=1)
    cache_size: int = Field(ge=0)


class OnOffRequest(BaseModel):
    """``form`` picks the evaluation: recursive (default), exact, or
    common-rho (which uses ``rho`` instead of ``on_prob``)."""

    rates: List[float] = Field(min_length=1)
    cache_size: int = Field(ge=0)
    form: str = "recursive"
    on_prob: Optional[List[float]] = None
    rho: Optional[float] = None


class MmppRequest(BaseModel):
    generator: List[List[float]]
    state_rates: List[List[float]]
    cache_size: int = Field(ge=0)
