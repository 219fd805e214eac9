from fastapi import FastAPI, Request, status
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from fastapi.encoders import jsonable_encoder
from fastapi.responses import JSONResponse
from fastapi.exceptions import RequestValidationError
from starlette.middleware.base import BaseHTTPMiddleware
from slowapi import Limiter, _rate_limit_exceeded_handler
from slowapi.util import get_remote_address
from slowapi.errors import RateLimitExceeded
from contextlib import asynccontextmanager
from app.middleware.auth import APIKeyMiddleware
from app.config import settings
from app.models.request import BenchmarkConfig, RunConfig
from app.models.response import BenchmarkRow, RunReport
from app.services.experiment import RUNTIME_ERRORS, run_experiment
from app.services.linear_benchmark import benchmark_run
from app.utils.metrics import metrics
from app.utils.timing import Stopwatch
from app import __version__
from typing import List
import asyncio
import logging

logging.basicConfig(level=settings.log_level)
logger = logging.getLogger(__name__)

limiter = Limiter(key_func=get_remote_address)
job_slots = asyncio.Semaphore(settings.max_concurrent_jobs)


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info(f"Starting SMCMC service (max {settings.max_concurrent_jobs} concurrent jobs)...")
    yield
    metrics.log_summary()
    logger.info("Shutting down SMCMC service...")

app = FastAPI(
    title="SMCMC Data Assimilation API",
    description="Sequential MCMC filtering for linear-Gaussian and shallow-water drifter experiments",
    version=__version__,
    lifespan=lifespan
)

app.state.limiter = limiter
app.add_exception_handler(RateLimitExceeded, _rate_limit_exceeded_handler)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.add_middleware(APIKeyMiddleware)


class TimingMiddleware(BaseHTTPMiddleware):
    async def dispatch(self, request: Request, call_next):
        metrics.record_request()
        with Stopwatch() as sw:
            response = await call_next(request)

        metrics.record_duration(f"http {request.url.path}", sw.seconds)
        response.headers["X-Process-Time"] = f"{sw.seconds:.6f}"
        logger.info(f"{request.method} {request.url.path} -> {response.status_code} in {sw.seconds:.3f}s")
        return response


app.add_middleware(TimingMiddleware)


def error_response(status_code: int, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"status": "error", "message": message, **extra})


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    logger.error(f"{request.method} {request.url.path} failed: {exc}", exc_info=True)
    metrics.record_error(type(exc).__name__)
    return error_response(status.HTTP_500_INTERNAL_SERVER_ERROR, "Run failed with an internal error")


@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request: Request, exc: RequestValidationError):
    logger.warning(f"Rejected configuration for {request.url.path}: {exc.errors()}")
    metrics.record_error("validation")
    return error_response(
        status.HTTP_422_UNPROCESSABLE_ENTITY, "Invalid experiment configuration", details=jsonable_encoder(exc.errors())
    )


@app.get("/health")
async def health_check():
    """Liveness and job-slot state; open without an API key"""
    return {
        "status": "healthy",
        "service": "smcmc-api",
        "version": __version__,
        "all_slots_busy": job_slots.locked(),
        "max_concurrent_jobs": settings.max_concurrent_jobs,
    }


@app.get("/metrics")
async def get_metrics():
    return metrics.get_summary()


@app.post("/api/experiments", response_model=RunReport)
@limiter.limit("10/minute")
async def experiment_endpoint(request: Request, config: RunConfig):
    logger.info(f"Experiment request: {config.experiment}, n={config.n_obs}, M={config.repeats}")
    async with job_slots:
        try:
            return await run_in_threadpool(run_experiment, config)
        except RUNTIME_ERRORS as e:
            logger.error(f"Experiment failed at run time: {e}", exc_info=True)
            metrics.record_error(type(e).__name__)
            return error_response(status.HTTP_500_INTERNAL_SERVER_ERROR, f"Run failed: {e}")
        except ValueError as e:
            logger.error(f"Experiment rejected: {e}", exc_info=True)
            metrics.record_error(type(e).__name__)
            return error_response(status.HTTP_422_UNPROCESSABLE_ENTITY, str(e))


@app.post("/api/benchmarks", response_model=List[BenchmarkRow])
@limiter.limit("2/minute")
async def benchmark_endpoint(request: Request, config: BenchmarkConfig):
    logger.info(f"Benchmark request: d={config.dims or [config.linear.d]}, T={config.n_obs}")
    async with job_slots:
        return await run_in_threadpool(benchmark_run, config)


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=settings.port)
