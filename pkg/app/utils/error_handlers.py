from fastapi import Request
from fastapi.responses import JSONResponse
from fastapi.exceptions import RequestValidationError
from sqlalchemy.exc import IntegrityError
import logging

from app import __version__
from app.utils.exceptions import RiskNetError

logger = logging.getLogger(__name__)

def create_error_response(status_code: int, message: str, error_type: str, path: str = None, details: dict = None):
    """Error envelope shared by every RiskNet DA endpoint"""
    body = {
        "error": True,
        "status_code": status_code,
        "message": message,
        "details": {"type": error_type, **(details or {})},
        "service": {"name": "risknet-da", "version": __version__},
    }
    if path:
        body["path"] = path
    return body

def _respond(request: Request, status_code: int, message: str, error_type: str, details: dict = None):
    return JSONResponse(
        status_code=status_code,
        content=create_error_response(status_code, message, error_type, request.url.path, details),
    )

async def validation_exception_handler(request: Request, exc: RequestValidationError):
    """Scenario and network payloads that fail pydantic validation"""
    fields = [
        {"field": ".".join(str(part) for part in error["loc"] if part != "body"), "message": error["msg"], "type": error["type"]}
        for error in exc.errors()
    ]
    logger.info(f"Rejected {request.method} {request.url.path}: {len(fields)} invalid field(s)")
    return _respond(request, 422, "Invalid configuration", "ValidationError", {"validation_errors": fields})

async def risknet_error_handler(request: Request, exc: RiskNetError):
    """Domain errors carry their own status code and diagnostics"""
    if exc.status_code >= 422:
        logger.warning(f"{type(exc).__name__} on {request.url.path}: {exc.message}")
    return _respond(request, exc.status_code, exc.message, type(exc).__name__, exc.details)

async def integrity_error_handler(request: Request, exc: IntegrityError):
    logger.error(f"Run registry integrity error: {exc}")
    orig = getattr(exc, "orig", None)
    return _respond(request, 400, "Run registry rejected the record", "IntegrityError", {"reason": str(orig or exc)})

async def general_exception_handler(request: Request, exc: Exception):
    logger.error(f"Unhandled {type(exc).__name__} on {request.url.path}", exc_info=True)
    return _respond(request, 500, "Simulation service failed unexpectedly", type(exc).__name__)
