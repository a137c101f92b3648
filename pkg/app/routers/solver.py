from fastapi import APIRouter, HTTPException
from fastapi.concurrency import run_in_threadpool

from app.config import MctsConfig
from app.domain import Instance, generate_instance
from app.errors import ConclaveError
from app.mcts import mcts_search
from app.models import (
    ExactRequest,
    InstanceRecord,
    InstanceRequest,
    MctsRequest,
    Packing,
    SolveRequest,
)
from app.solver import WspInstance, solve_bnb, solve_exact

router = APIRouter(tags=["Solver"])


async def _run(fn, *args, **kwargs):
    """CPU-bound work off the event loop; domain errors become 422."""
    try:
        return await run_in_threadpool(fn, *args, **kwargs)
    except ConclaveError as e:
        raise HTTPException(422, f"{type(e).__name__}: {e}")


@router.post("/instances", response_model=InstanceRecord)
async def create_instance(request: InstanceRequest):
    instance = await _run(generate_instance, request.domain, request.n, request.seed)
    return instance.to_record()


@router.post("/solve", response_model=Packing)
async def solve(request: SolveRequest):
    try:
        inst = WspInstance.from_sets(request.n, ((s.members, s.value) for s in request.sets), request.mode)
    except ConclaveError as e:
        raise HTTPException(422, f"{type(e).__name__}: {e}")
    return await _run(solve_bnb, inst, time_budget=request.time_budget, node_limit=request.node_limit)


@router.post("/solve/exact", response_model=Packing)
async def solve_instance(request: ExactRequest):
    try:
        instance = Instance.from_record(request.instance)
    except ConclaveError as e:
        raise HTTPException(422, f"{type(e).__name__}: {e}")
    return await _run(solve_exact, instance, time_budget=request.time_budget)


@router.post("/mcts", response_model=Packing)
async def run_mcts(request: MctsRequest):
    try:
        instance = Instance.from_record(request.instance)
    except ConclaveError as e:
        raise HTTPException(422, f"{type(e).__name__}: {e}")
    config = MctsConfig(policy=request.policy, iterations=request.iterations, seed=request.seed)
    return await _run(mcts_search, instance, config)
