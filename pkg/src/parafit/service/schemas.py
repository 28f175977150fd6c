"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Union

from pydantic import BaseModel, Field

# A parameter slot accepts either the handle of an existing Variable or a
# bare number (which becomes a fixed constant server-side).
ParamRef = Union[str, float]


class VariableCreate(BaseModel):
    name: str
    value: float = 0.0
    lower: float | None = None
    upper: float | None = None
    step: float | None = None
    fixed: bool = False
    kind: str = "parameter"


class VariableState(BaseModel):
    handle: str
    name: str
    value: float
    lower: float | None
    upper: float | None
    step: float
    fixed: bool
    kind: str
    generation: int
    error: float


class ValueUpdate(BaseModel):
    value: float


class DatasetCreate(BaseModel):
    observables: list[str] = Field(min_length=1)
    lenient: bool = False


class DatasetState(BaseModel):
    handle: str
    observables: list[str]
    n_events: int
    rejected_count: int


class EventsAdd(BaseModel):
    rows: list[list[float]]


class GaussianCreate(BaseModel):
    observable: str
    mu: ParamRef
    sigma: ParamRef


class ExponentialCreate(BaseModel):
    observable: str
    alpha: ParamRef


class PolynomialCreate(BaseModel):
    observable: str
    coefficients: list[ParamRef]


class AddCreate(BaseModel):
    children: list[str] = Field(min_length=2)
    fractions: list[ParamRef]


class ProdCreate(BaseModel):
    children: list[str] = Field(min_length=2)


class DalitzCreate(BaseModel):
    model: dict
    grid: int = 400


class PdfState(BaseModel):
    handle: str
    kind: str
    observables: list[str]
    parameters: dict[str, str]  # variable name -> handle


class FitRequest(BaseModel):
    pdf: str
    dataset: str
    backend: str = "serial"
    threads: int = 0
    workers: int = 1
    edm_tol: float = 1e-6
    max_calls: int | None = None


class ParameterOut(BaseModel):
    name: str
    value: float
    error: float
    fixed: bool


class FitResponse(BaseModel):
    """Mirrors the CLI result document field for field."""

    status: str
    nll: float
    edm: float
    n_calls: int
    wall_time_s: float
    parameters: list[ParameterOut]
    covariance: list[float]


class NllRequest(BaseModel):
    pdf: str
    dataset: str
    workers: int = 1


class NllResponse(BaseModel):
    nll: float


class SnapshotResponse(BaseModel):
    names: list[str]
    values: list[float]
    generations: list[int]


class ErrorBody(BaseModel):
    error: str
    detail: str
