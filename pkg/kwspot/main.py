import logging
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from kwspot.api.routes import router
from kwspot.config import configure_logging, load_experiment_config, settings
from kwspot.dependencies import set_decoder_service
from kwspot.errors import ConfigError, DataError, DimensionMismatch, KwsError, LengthMismatch
from kwspot.experiment_service import ExperimentService
from kwspot.models import ErrorResponse

configure_logging()

logger = logging.getLogger(__name__)

# Create FastAPI application
app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    description="Acoustic keyword spotting service",
    docs_url="/docs",
    redoc_url="/redoc"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def initialize_decoder_service():
    """Load the trained model from settings.model_dir, if one is configured"""
    if not settings.model_dir:
        logger.info("No model directory configured; /spot and /model stay unavailable")
        return
    model_dir = Path(settings.model_dir)
    config_path = model_dir / "config.json"
    try:
        config = load_experiment_config(str(config_path) if config_path.exists() else None)
        config = config.model_copy(update={"workdir": str(model_dir)})
        service = ExperimentService(config).decoder()
    except KwsError as e:
        logger.error(f"Failed to load model from {model_dir}: {e}")
        return
    logger.info(f"Loaded {service.model} with {len(service.system.keywords)} keywords")
    set_decoder_service(service)


@app.on_event("startup")
async def startup_event():
    initialize_decoder_service()


app.include_router(router, prefix="/api/v1", tags=["Keyword Spotting"])

CLIENT_ERRORS = (DataError, ConfigError, DimensionMismatch, LengthMismatch)


def _error_body(status_code: int, error: str, exc: Optional[Exception] = None) -> JSONResponse:
    detail = str(exc) if (exc is not None and settings.debug) else None
    body = ErrorResponse(error=error, status_code=status_code, detail=detail)
    return JSONResponse(status_code=status_code, content=body.model_dump())


@app.exception_handler(HTTPException)
async def http_exception_handler(request, exc):
    return _error_body(exc.status_code, exc.detail)


@app.exception_handler(KwsError)
async def kws_exception_handler(request, exc):
    # client errors carry the exception class name so callers can branch on it
    status_code = 400 if isinstance(exc, CLIENT_ERRORS) else 500
    logger.warning(f"{request.url.path} failed with {type(exc).__name__}: {exc}")
    return _error_body(status_code, type(exc).__name__, exc)


@app.exception_handler(Exception)
async def general_exception_handler(request, exc):
    logger.error(f"Unhandled exception on {request.url.path}: {exc}")
    return _error_body(500, "Internal server error", exc)


@app.get("/")
async def root():
    return {
        "service": settings.app_name,
        "version": settings.app_version,
        "endpoints": ["/api/v1/spot", "/api/v1/eer", "/api/v1/model"],
        "health": "/api/v1/health",
    }
