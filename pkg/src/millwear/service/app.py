"""FastAPI application exposing the pipeline as an HTTP service."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..errors import FormatError, MillwearError, ParameterError, ShapeError
from . import handlers, schemas


def create_app() -> FastAPI:
    app = FastAPI(
        title="millwear",
        description=(
            "Tool-condition monitoring for single-axis milling vibration data: "
            "synthetic data generation, segmentation, feature extraction, "
            "classifier training, evaluation and split sweeps."
        ),
    )

    def guard(fn, *args):
        try:
            return fn(*args)
        except (ParameterError, ShapeError, FormatError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except MillwearError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return handlers.health()

    @app.post("/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest):
        return guard(handlers.run_synth, req)

    @app.post("/segment", response_model=schemas.SegmentResponse)
    def segment(req: schemas.SegmentRequest):
        return guard(handlers.run_segment, req)

    @app.post("/features", response_model=schemas.FeaturesResponse)
    def features(req: schemas.FeaturesRequest):
        return guard(handlers.run_features, req)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        return guard(handlers.run_train, req)

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_(req: schemas.EvalRequest):
        return guard(handlers.run_eval, req)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        return guard(handlers.run_sweep, req)

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(req: schemas.PredictRequest):
        return guard(handlers.run_predict, req)

    return app


app = create_app()
