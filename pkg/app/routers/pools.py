from typing import List

import numpy as np
from fastapi import APIRouter, Depends, HTTPException, Request
from fastapi.concurrency import run_in_threadpool

from app.domain import Instance
from app.errors import ConclaveError
from app.generate import GenerationBudget, generate_pool
from app.models import PoolRecord, PoolRequest
from app.policy import PolicyModel

router = APIRouter(prefix="/pools", tags=["Pools"])


def get_policy(request: Request) -> PolicyModel:
    """Dependency: the checkpoint loaded at startup."""
    model = getattr(request.app.state, "model", None)
    if model is None:
        raise HTTPException(503, "No policy checkpoint loaded")
    return model


@router.post("", response_model=List[PoolRecord])
async def sample_pool(
    body: PoolRequest, request: Request, model: PolicyModel = Depends(get_policy)
):
    trained_on = (getattr(request.app.state, "meta", None) or {}).get("domain")
    if trained_on is not None and trained_on != body.instance.domain.value:
        raise HTTPException(422, f"Loaded policy serves {trained_on}, not {body.instance.domain.value}")
    if body.rollouts is None and body.seconds is None:
        raise HTTPException(422, "Give rollouts or seconds")

    def work():
        instance = Instance.from_record(body.instance)
        budget = GenerationBudget(seconds=body.seconds, rollouts=body.rollouts)
        return generate_pool(model, instance, budget, np.random.default_rng(body.seed)).records()

    try:
        return await run_in_threadpool(work)
    except ConclaveError as e:
        raise HTTPException(422, f"{type(e).__name__}: {e}")
