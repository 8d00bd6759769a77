"""Request and response bodies of the HTTP service."""

from __future__ import annotations

import base64
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator

from ..imgcore import GrayImage


class ImagePayload(BaseModel):
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    pixels: str = Field(description="base64 of width*height row-major 8-bit pixels")

    @field_validator("pixels")
    @classmethod
    def _is_base64(cls, v: str) -> str:
        try:
            base64.b64decode(v, validate=True)
        except ValueError as exc:
            raise ValueError("pixels must be base64") from exc
        return v

    def to_image(self) -> GrayImage:
        return GrayImage.from_bytes(self.width, self.height, base64.b64decode(self.pixels))

    @classmethod
    def from_image(cls, img: GrayImage) -> "ImagePayload":
        return cls(width=img.width, height=img.height, pixels=base64.b64encode(img.pixels.tobytes()).decode())


class ExtractRequest(BaseModel):
    image_id: int = 0
    image: ImagePayload
    mode: Literal["fixed", "float"] = "fixed"
    resize: Optional[int] = Field(default=128, ge=2, description="prescale side; null keeps the input size")


class ExtractResponse(BaseModel):
    image_id: int
    mode: str
    n_features: int
    raw: list[float]
    scaled: list[float]
    saturated: list[int] = Field(description="indices of features with no valid location")
    score: Optional[float] = None
    prediction: Optional[int] = None


class BatchExtractRequest(BaseModel):
    images: list[ExtractRequest]


class BatchExtractResponse(BaseModel):
    results: list[ExtractResponse]
    errors: dict[int, str] = {}


class MacCountsResponse(BaseModel):
    dense: int
    separable: int
    separable_folded: int
    s2_per_location: int


class ResourceModel(BaseModel):
    n_pixels: int
    s1_input_bits: int
    s1_intermediate_bits: int
    s1_filter_bits: int
    c1_bits: float
    s2_bits: int
    c2_bits: int
    classifier_bits: int
    total_bits: float
    counter_bits: int
    available_bits: int


class TimingModel(BaseModel):
    n_pixels: int
    clock_hz: float
    c1_convention: str
    input_cycles: int
    s1_cycles: int
    s2_cycles: float
    classifier_cycles: int
    input_rate: int
    s1_rate: int
    s2_rate: int
    classifier_rate: int
    bottleneck: str
    bottleneck_cycles: float
    pipeline_rate: int


class PerfResponse(BaseModel):
    resources: ResourceModel
    timing: TimingModel


class EerRequest(BaseModel):
    scores: list[float]
    labels: list[int]


class EerResponse(BaseModel):
    accuracy: float
    eer: float


class PredictRequest(BaseModel):
    features: list[list[float]]


class PredictResponse(BaseModel):
    scores: list[float]
    predictions: list[int]


class HealthResponse(BaseModel):
    status: str
    dictionary_patches: Optional[int] = None
    model: Optional[str] = None
