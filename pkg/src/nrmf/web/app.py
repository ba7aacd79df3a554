"""Minimal FastAPI app entry."""

from fastapi import FastAPI

from nrmf import __version__
from nrmf.config import get_out_dir

app = FastAPI(title="NRMF results", version=__version__)


def mount_routes():
    """Include the API router."""
    from nrmf.web.routes import api_router

    app.include_router(api_router, prefix="/api", tags=["api"])


@app.get("/")
async def root():
    return {"message": "NRMF results", "out_dir": str(get_out_dir()), "docs": "/docs"}


mount_routes()
