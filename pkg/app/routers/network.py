from fastapi import APIRouter
from typing import Dict, Optional
from pydantic import BaseModel, Field, model_validator
import logging

from app import config
from app.models.scenario_config import NetworkConfig
from app.services.network import day_average_rate, generate_static_network, mean_contact_rate

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/network", tags=["Network"])

class NetworkSummary(BaseModel):
    n_persons: int
    n_beds: int
    group_sizes: Dict[str, int]
    n_edges: int
    edges_per_block: Dict[str, int]
    mean_degree_community: float
    mean_degree_hcw: float
    k_hat: float

class ContactRateRequest(BaseModel):
    lambda_min: float = Field(config.LAMBDA_MIN, ge=0)
    lambda_max: float = Field(config.LAMBDA_MAX, ge=0)
    k_hat: Optional[float] = Field(None, gt=0)  # defaults to the community mean degree
    deactivation_rate: float = Field(config.EDGE_DEACTIVATION_RATE, gt=0)

    @model_validator(mode="after")
    def _bounds(self):
        if self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min must not exceed lambda_max")
        return self

class ContactRateResponse(BaseModel):
    mean_contact_rate: float  # contacts per node per day
    edge_activation_rate: float  # per edge per day
    mean_edge_activity: float  # stationary active fraction <w>

@router.post("/generate", response_model=NetworkSummary)
def generate_network(params: NetworkConfig):
    """Build a static contact network and report its block structure"""
    network = generate_static_network(params)
    logger.info(f"Generated network via API: {network.n_persons} persons, {network.n_edges} edges")
    return network.summary()

@router.post("/contact-rate", response_model=ContactRateResponse)
def contact_rate(request: ContactRateRequest):
    """Day-averaged contact rate and mean edge activity for given lambda bounds"""
    k_hat = request.k_hat or NetworkConfig().community_mean_degree
    rate = day_average_rate(request.lambda_min, request.lambda_max, k_hat)
    return {
        "mean_contact_rate": mean_contact_rate(request.lambda_min, request.lambda_max),
        "edge_activation_rate": rate,
        "mean_edge_activity": rate / (request.deactivation_rate + rate),
    }
