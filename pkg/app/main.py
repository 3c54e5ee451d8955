from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.exceptions import RequestValidationError
from sqlalchemy.exc import IntegrityError
from app import __version__
from app.routers import network, observations, scenarios
from app.models import create_tables
from app.utils.exceptions import RiskNetError
from app.utils.error_handlers import (
    validation_exception_handler,
    risknet_error_handler,
    integrity_error_handler,
    general_exception_handler
)

# Create database tables
create_tables()

app = FastAPI(
    title="RiskNet DA",
    description="Epidemic network simulation and ensemble data assimilation for exposure-risk classification",
    version=__version__,
    docs_url="/docs",
    redoc_url="/redoc"
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],  # Configure this properly for production
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Add exception handlers
app.add_exception_handler(RequestValidationError, validation_exception_handler)
app.add_exception_handler(RiskNetError, risknet_error_handler)
app.add_exception_handler(IntegrityError, integrity_error_handler)
app.add_exception_handler(Exception, general_exception_handler)

app.include_router(network.router)
app.include_router(scenarios.router)
app.include_router(observations.router)

@app.get("/")
def root():
    return {
        "message": "Welcome to RiskNet DA",
        "version": __version__,
        "docs": "/docs",
        "features": [
            "Contact network generation",
            "Kinetic Monte Carlo surrogate epidemics",
            "Ensemble data assimilation of test results",
            "Risk classification and contact interventions"
        ]
    }

@app.get("/health")
def health_check():
    return {"status": "healthy", "message": "RiskNet DA is running"}
