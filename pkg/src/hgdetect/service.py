"""HTTP service exposing the pipeline stages.

Each stage is a POST endpoint taking the run configuration (plus common
overrides) and an output directory; artifacts land on the service host's
filesystem and the response carries the stage manifest.  Validation problems
map to 400/422, ordering and stale-artifact refusals to 409, everything else
to 500.
"""

from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict

from . import pipeline
from .augment import AugmentationError
from .hetgraph import GraphError
from .pipeline import (OrderingError, PipelineError, RunConfig, StaleInputError)

app = FastAPI(title="hgdetect", version="0.1.0")


class StageRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    out_dir: str
    config: dict = {}
    seed: Optional[int] = None
    mock_llm: Optional[bool] = None
    llm_endpoint: Optional[str] = None
    llm_model: Optional[str] = None
    split: Optional[float] = None


class StageResponse(BaseModel):
    stage: str
    manifest: dict


class PipelineResponse(BaseModel):
    manifests: list


def build_config(req: StageRequest) -> RunConfig:
    cfg = RunConfig.model_validate(req.config)
    if req.seed is not None:
        cfg.seed = req.seed
    if req.mock_llm is not None:
        cfg.augment.mock_llm = req.mock_llm
    if req.llm_endpoint is not None:
        cfg.augment.endpoint = req.llm_endpoint
    if req.llm_model is not None:
        cfg.augment.model = req.llm_model
    if req.split is not None:
        cfg = cfg.apply_split_preset(req.split)
    return cfg


def _run(stage_fn, req: StageRequest):
    try:
        cfg = build_config(req)
        return stage_fn(cfg, req.out_dir)
    except (OrderingError, StaleInputError) as e:
        raise HTTPException(status_code=409, detail=str(e))
    except (ValueError, GraphError, AugmentationError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except PipelineError as e:
        raise HTTPException(status_code=500, detail=str(e))


def _make_endpoint(name, fn):
    def endpoint(req: StageRequest) -> StageResponse:
        return StageResponse(stage=name, manifest=_run(fn, req))

    endpoint.__name__ = f"stage_{name}"
    return endpoint


for _name, _fn in pipeline.STAGES.items():
    app.post(f"/stages/{_name}", response_model=StageResponse)(_make_endpoint(_name, _fn))


@app.post("/stages/pipeline", response_model=PipelineResponse)
def stage_pipeline(req: StageRequest) -> PipelineResponse:
    return PipelineResponse(manifests=_run(pipeline.run_pipeline, req))


@app.get("/health")
def health():
    return {"status": "ok"}
