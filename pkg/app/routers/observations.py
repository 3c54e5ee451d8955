from fastapi import APIRouter
from pydantic import BaseModel, Field

from app.models.scenario_config import AssayConfig
from app.services.observations import AssaySpec, for_rate, ppv

router = APIRouter(prefix="/observations", tags=["Observations"])

class PredictiveValueRequest(BaseModel):
    assay: AssayConfig
    prevalence: float = Field(..., gt=0.0, le=1.0)

class PredictiveValueResponse(BaseModel):
    ppv: float  # observed <I> after a positive result
    false_omission_rate: float  # observed <I> after a negative result
    positive_error_rate: float
    negative_error_rate: float

@router.post("/predictive-values", response_model=PredictiveValueResponse)
def predictive_values(request: PredictiveValueRequest):
    """Observed probabilities and error rates an assay result maps to"""
    assay = AssaySpec.from_config(request.assay)
    pos = ppv(assay, request.prevalence)
    neg = for_rate(assay, request.prevalence)
    return {
        "ppv": pos,
        "false_omission_rate": neg,
        "positive_error_rate": 1.0 - pos,
        "negative_error_rate": neg,
    }
