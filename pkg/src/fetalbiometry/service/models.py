"""Request/response schemas for the analysis service.

Paths in requests refer to the filesystem the service process can see; for
the in-process CLI they are ordinary local paths. Config overrides carry
only explicitly-set values so the service applies its own defaults.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class ConfigOverrides(BaseModel):
    gate_threshold: float | None = None
    mask_threshold: float | None = None
    rdp_eps_rel: float | None = None
    dice_eps: float | None = None
    femur_weights: tuple[float, float] | None = None
    ellipse_weights: tuple[float, float, float] | None = None
    threads: int | None = None

    def as_kwargs(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class AnalyzeRequest(BaseModel):
    input_dir: str
    backend: str = Field(description="fixture:DIR or phantom:SPEC_PATH")
    seed: int = 0
    config: ConfigOverrides = Field(default_factory=ConfigOverrides)


class AnalyzeResponse(BaseModel):
    report: dict
    frames_csv: str


class PhantomRequest(BaseModel):
    out_dir: str
    seed: int = 0
    spec_path: str | None = None
    spec: dict | None = None  # inline alternative to spec_path


class PhantomResponse(BaseModel):
    study_id: str
    frame_count: int
    files: list[str]
    ground_truth: dict


class AgreeRequest(BaseModel):
    ratings_csv: str
    reference: str
    icc_variant: str = "2,1"


class AgreeResponse(BaseModel):
    stats: dict


class EvaluateRequest(BaseModel):
    backend: str
    truth_dir: str
    seed: int = 0
    config: ConfigOverrides = Field(default_factory=ConfigOverrides)


class EvaluateResponse(BaseModel):
    metrics: dict


class ErrorBody(BaseModel):
    kind: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorBody
