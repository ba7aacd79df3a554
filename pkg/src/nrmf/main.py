"""Run the results server."""

import uvicorn


def run(host: str = "0.0.0.0", port: int = 8000):
    """Serve nrmf.web.app over the directory named by NRMF_OUT_DIR."""
    uvicorn.run(
        "nrmf.web.app:app",
        host=host,
        port=port,
        reload=False,
    )


if __name__ == "__main__":
    run()
