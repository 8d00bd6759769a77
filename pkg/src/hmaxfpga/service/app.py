"""HTTP front end: feature extraction against a resident dictionary, plus the
performance model and the EER metric.

Run with ``hmaxfpga serve`` or ``uvicorn --factory hmaxfpga.service.app:app_from_env``.
"""

from __future__ import annotations

import os
from dataclasses import asdict

import numpy as np
from fastapi import FastAPI, HTTPException, Query

from ..classifiers import BoostModel, SvmModel, eer_accuracy, equal_error_rate, load_model
from ..errors import HmaxError
from ..imgcore import resize_to
from ..perfmodel import mac_counts, memory_report, timing_report
from ..pipeline import ExtractionJob, FeaturePipeline, extract_c2
from ..s2_patches import C2Vector, PatchDictionary, load_dictionary
from .schemas import (BatchExtractRequest, BatchExtractResponse, EerRequest, EerResponse, ExtractRequest,
                      ExtractResponse, HealthResponse, MacCountsResponse, PerfResponse, PredictRequest,
                      PredictResponse)


def _response(c2: C2Vector, model) -> ExtractResponse:
    scaled = c2.scaled()
    out = ExtractResponse(
        image_id=c2.image_id, mode=c2.mode, n_features=len(c2),
        raw=c2.values.tolist(), scaled=scaled.tolist(),
        saturated=np.flatnonzero(c2.saturated).tolist(),
    )
    if isinstance(model, BoostModel):
        out.score = float(model.decision_function(scaled))
        out.prediction = 1 if out.score >= 0 else -1
    elif isinstance(model, SvmModel):
        s = model.decision_function(scaled)[0]
        out.prediction = int(np.argmax(s))
        out.score = float(s[out.prediction])
    return out


def create_app(dictionary: PatchDictionary | None = None, model=None, threads: int | None = None) -> FastAPI:
    app = FastAPI(title="hmaxfpga", description="HMAX feature extraction and hardware performance model")
    app.state.dictionary = dictionary
    app.state.model = model

    def need_dictionary() -> PatchDictionary:
        if app.state.dictionary is None:
            raise HTTPException(status_code=503, detail="no patch dictionary loaded")
        return app.state.dictionary

    def prepared(req: ExtractRequest):
        try:
            img = req.image.to_image()
            if req.resize is not None and (img.width, img.height) != (req.resize, req.resize):
                img = resize_to(img, req.resize)
        except HmaxError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return img

    @app.get("/health", response_model=HealthResponse)
    def health():
        d, m = app.state.dictionary, app.state.model
        return HealthResponse(status="ok", dictionary_patches=len(d) if d is not None else None,
                              model=type(m).__name__ if m is not None else None)

    @app.post("/extract", response_model=ExtractResponse)
    def extract(req: ExtractRequest):
        d = need_dictionary()
        img = prepared(req)
        try:
            c2 = extract_c2(img, d, req.mode, req.image_id)
        except HmaxError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return _response(c2, app.state.model)

    @app.post("/extract/batch", response_model=BatchExtractResponse)
    def extract_batch(req: BatchExtractRequest):
        d = need_dictionary()
        modes = {r.mode for r in req.images}
        if len(modes) > 1:
            raise HTTPException(status_code=422, detail="a batch must use a single mode")
        mode = modes.pop() if modes else "fixed"
        jobs = [ExtractionJob(r.image_id, prepared(r)) for r in req.images]
        results, errors = [], {}
        for res in FeaturePipeline(d, mode, threads).run(jobs):
            if res.ok:
                results.append(_response(res.c2, app.state.model))
            else:
                errors[res.image_id] = res.error
        return BatchExtractResponse(results=results, errors=errors)

    @app.get("/perf", response_model=PerfResponse)
    def perf(pixels: int = Query(16384, ge=1), clock_mhz: float = Query(100.0, gt=0),
             c1_convention: str = Query("exact", pattern="^(exact|paper)$")):
        try:
            res = memory_report(pixels)
            tim = timing_report(pixels, clock_mhz * 1e6, c1_convention)
        except HmaxError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return PerfResponse(resources=asdict(res), timing=asdict(tim))

    @app.get("/perf/macs", response_model=MacCountsResponse)
    def macs():
        return MacCountsResponse(**asdict(mac_counts()))

    @app.post("/eer", response_model=EerResponse)
    def eer(req: EerRequest):
        if len(req.scores) != len(req.labels):
            raise HTTPException(status_code=422, detail="scores and labels differ in length")
        try:
            return EerResponse(accuracy=eer_accuracy(req.scores, req.labels),
                               eer=equal_error_rate(req.scores, req.labels))
        except HmaxError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest):
        m = app.state.model
        if m is None:
            raise HTTPException(status_code=503, detail="no classifier loaded")
        try:
            X = np.array(req.features, dtype=np.float64)
            if isinstance(m, BoostModel):
                scores = m.decision_function(X)
                preds = np.where(scores >= 0, 1, -1)
            else:
                all_scores = m.decision_function(X)
                preds = np.argmax(all_scores, axis=1)
                scores = all_scores[np.arange(len(preds)), preds]
        except (HmaxError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return PredictResponse(scores=np.asarray(scores).tolist(), predictions=np.asarray(preds).tolist())

    return app


def app_from_env() -> FastAPI:
    """App configured from ``HMAX_DICT`` and ``HMAX_MODEL`` file paths."""
    d = os.environ.get("HMAX_DICT")
    m = os.environ.get("HMAX_MODEL")
    return create_app(load_dictionary(d) if d else None, load_model(m) if m else None)
