from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from app.core.config import settings
from app.core.exceptions import QKDError
from app.core.logging import configure_logging
from app.db.session import init_db
from app.routes import analysis, runs

configure_logging(settings.LOG_LEVEL)

app = FastAPI(title="qudit-qkd workbench")

@app.exception_handler(QKDError)
async def qkd_error_handler(request: Request, exc: QKDError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})

@app.on_event("startup")
def create_tables():
    init_db()

# Routes
app.include_router(analysis.router)
app.include_router(runs.router)

@app.get("/")
def read_root():
    return {"service": "qudit-qkd workbench", "routes": ["/analysis", "/runs"]}
