from contextlib import asynccontextmanager

from fastapi import FastAPI

from app.config import settings
from app.errors import ConfigError
from app.logging import setup_logging

# Import Routers
from app.routers import pools, solver
from app.train import model_from_checkpoint

logger = setup_logging()


@asynccontextmanager
async def lifespan(app: FastAPI):
    # 1. Startup
    app.state.model = None
    app.state.meta = None
    if settings.CHECKPOINT_PATH:
        try:
            app.state.model, app.state.meta = model_from_checkpoint(settings.CHECKPOINT_PATH)
            logger.info(f"Policy loaded from {settings.CHECKPOINT_PATH} ({app.state.meta.get('domain')})")
        except (ConfigError, OSError) as e:
            logger.error(f"Checkpoint load failed: {e}")
    else:
        logger.warning("No CHECKPOINT_PATH set; /pools is disabled")

    yield

    # 2. Shutdown
    app.state.model = None


app = FastAPI(
    title=settings.APP_TITLE,
    lifespan=lifespan,
    description="Collective formation: candidate pools, exact packing and tree-search baselines",
)

app.include_router(solver.router)
app.include_router(pools.router)


@app.get("/health")
async def health():
    meta = getattr(app.state, "meta", None)
    return {
        "checkpoint_loaded": getattr(app.state, "model", None) is not None,
        "domain": meta.get("domain") if meta else None,
        "config": meta,
        "budget_mode": settings.BUDGET_MODE,
    }
