from fastapi import Request, status
from fastapi.responses import JSONResponse
from starlette.middleware.base import BaseHTTPMiddleware
from app.config import settings
import hmac
import logging

logger = logging.getLogger(__name__)

OPEN_PATHS = {"/health", "/metrics"}


def _unauthorized(message: str) -> JSONResponse:
    return JSONResponse(status_code=status.HTTP_401_UNAUTHORIZED, content={"status": "error", "message": message})


class APIKeyMiddleware(BaseHTTPMiddleware):
    """Gates job routes behind x-api-key once SMCMC_API_KEY is set"""

    async def dispatch(self, request: Request, call_next):
        expected = settings.api_key
        if expected is None or request.url.path in OPEN_PATHS:
            return await call_next(request)

        supplied = request.headers.get("x-api-key")
        if not supplied:
            return _unauthorized("API key is required")
        if not hmac.compare_digest(supplied.encode(), expected.encode()):
            logger.warning(f"Rejected invalid API key for {request.url.path}")
            return _unauthorized("Invalid API key")
        return await call_next(request)
