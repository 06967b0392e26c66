"""JSON-over-HTTP serving layer: /train, /train/<id>, /predict, /health."""
from __future__ import annotations

import argparse
import threading
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .model import ModelConfig, PairScorer, Variant
from .training import (
    EpochLoss,
    TrainSpec,
    find_latest_checkpoint,
    load_checkpoint,
    load_examples,
    train,
)

DEFAULT_MAX_BATCH = 64


class Pair(BaseModel):
    left_text: str = Field(min_length=1)
    right_text: str = Field(min_length=1)
    target_speaker: str = "A"


class PredictRequest(BaseModel):
    variant: Variant = Variant.BIENCODER_SUMREC
    pairs: list[Pair]


class TrainRequest(BaseModel):
    variant: Variant = Variant.BIENCODER_SUMREC
    train_path: str
    val_path: str
    learning_rate: float = 1e-6
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    model: dict = Field(default_factory=dict)  # ModelConfig overrides


@dataclass
class TrainJob:
    job_id: str
    status: str = "running"  # running | done | failed
    epoch_losses: list[EpochLoss] = field(default_factory=list)
    best_epoch: Optional[int] = None
    checkpoint_digest: Optional[str] = None
    error: Optional[str] = None


@dataclass
class ServiceState:
    checkpoint_root: Path
    max_batch: int = DEFAULT_MAX_BATCH
    models: dict[Variant, tuple[PairScorer, str]] = field(default_factory=dict)
    jobs: dict[str, TrainJob] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    active_job: Optional[str] = None


def create_app(
    checkpoint_root: Path | str = "checkpoints", max_batch: int = DEFAULT_MAX_BATCH
) -> FastAPI:
    state = ServiceState(checkpoint_root=Path(checkpoint_root), max_batch=max_batch)
    for variant in Variant:
        latest = find_latest_checkpoint(state.checkpoint_root, variant)
        if latest is not None:
            state.models[variant] = load_checkpoint(latest)

    app = FastAPI(title="neural scorer service")
    app.state.scorer = state

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/health")
    def health(variant: Variant = Variant.BIENCODER_SUMREC):
        loaded = state.models.get(variant)
        return {
            "status": "ok",
            "variant": variant.value,
            "checkpoint_digest": loaded[1] if loaded else None,
        }

    @app.post("/predict")
    def predict(body: PredictRequest):
        if len(body.pairs) > state.max_batch:
            raise HTTPException(status_code=413, detail=f"batch limit is {state.max_batch}")
        loaded = state.models.get(body.variant)
        if loaded is None:
            raise HTTPException(status_code=503, detail="no checkpoint loaded for this variant")
        model, _ = loaded
        scores = model.predict(
            [p.left_text for p in body.pairs],
            [p.right_text for p in body.pairs],
            [p.target_speaker for p in body.pairs],
        )
        return {"scores": scores}

    def _run_job(job: TrainJob, body: TrainRequest):
        try:
            spec = TrainSpec(
                variant=body.variant,
                learning_rate=body.learning_rate,
                batch_size=body.batch_size,
                max_epochs=body.max_epochs,
                patience=body.patience,
                seed=body.seed,
                model=ModelConfig(**body.model),
            )
            result = train(
                spec,
                load_examples(body.train_path),
                load_examples(body.val_path),
                state.checkpoint_root,
                on_epoch=job.epoch_losses.append,
            )
            model, digest = load_checkpoint(result.checkpoint_dir)
            with state.lock:
                state.models[body.variant] = (model, digest)
                job.best_epoch = result.best_epoch
                job.checkpoint_digest = digest
                job.status = "done"
        except Exception as e:  # noqa: BLE001 - job failures are reported, not raised
            with state.lock:
                job.status = "failed"
                job.error = str(e)
        finally:
            with state.lock:
                state.active_job = None

    @app.post("/train", status_code=202)
    def start_train(body: TrainRequest):
        for path in (body.train_path, body.val_path):
            if not Path(path).is_file():
                raise HTTPException(status_code=400, detail=f"missing dataset file: {path}")
        with state.lock:
            if state.active_job is not None:
                raise HTTPException(status_code=409, detail="a training job is already running")
            job = TrainJob(job_id=uuid.uuid4().hex[:12])
            state.jobs[job.job_id] = job
            state.active_job = job.job_id
        threading.Thread(target=_run_job, args=(job, body), daemon=True).start()
        return {"job_id": job.job_id}

    @app.get("/train/{job_id}")
    def train_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail="unknown job id")
        with state.lock:
            return {
                "job_id": job.job_id,
                "status": job.status,
                "epoch_losses": [asdict(e) for e in job.epoch_losses],
                "best_epoch": job.best_epoch,
                "checkpoint_digest": job.checkpoint_digest,
                "error": job.error,
            }

    return app


def main(argv: Optional[list[str]] = None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(description="neural scorer service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    parser.add_argument("--checkpoints", default="checkpoints")
    parser.add_argument("--max-batch", type=int, default=DEFAULT_MAX_BATCH)
    args = parser.parse_args(argv)
    app = create_app(checkpoint_root=args.checkpoints, max_batch=args.max_batch)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
