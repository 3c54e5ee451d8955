import logging
import os

# Units: time is measured in days throughout.
MINUTE = 1.0 / 1440.0
HOUR = 1.0 / 24.0

# Environment settings
OUTPUT_DIR = os.getenv("RISKNET_OUTPUT_DIR", "runs")
LOG_LEVEL = os.getenv("LOG_LEVEL", "DEBUG" if os.getenv("DEBUG") == "1" else "INFO")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# File format versions
NETWORK_FORMAT_VERSION = 1
ENSEMBLE_FORMAT_VERSION = 1
SCENARIO_SCHEMA_VERSION = 1

# Transmission and progression (per day)
TRANSMISSION_RATE = 12.0
HOSPITAL_TRANSMISSION_MODIFIER = 0.1
LATENT_PERIOD = 3.7
INFECTIOUS_PERIOD = 3.2
HOSPITAL_STAY = 5.0

# Contact process
LAMBDA_MIN = 4.0
LAMBDA_MAX = 84.0
LOCKDOWN_LAMBDA_MAX = 33.0
ISOLATION_LAMBDA = 4.0
MEAN_CONTACT_DURATION = 2 * MINUTE
EDGE_DEACTIVATION_RATE = 1.0 / MEAN_CONTACT_DURATION  # 720 per day

# Age bands: population share f, hospitalization h, community mortality d,
# in-hospital mortality d'
AGE_BANDS = ("0-17", "18-44", "45-64", "65-74", "75+")
AGE_DISTRIBUTION = (0.207, 0.400, 0.245, 0.083, 0.065)
HOSPITALIZATION_RATE = (0.002, 0.010, 0.040, 0.076, 0.160)
COMMUNITY_MORTALITY_RATE = (0.000001, 0.00001, 0.001, 0.007, 0.015)
HOSPITAL_MORTALITY_RATE = (0.019, 0.073, 0.193, 0.327, 0.512)
WORKING_AGE_BANDS = (1, 2)

# Group layout
HCW_FRACTION = 0.05

# Assays (sensitivity, specificity)
DIAGNOSTIC_ASSAY = (0.80, 0.99)
SENSOR_ASSAY = (0.20, 0.98)
SEROLOGY_ASSAY = (0.90, 0.95)

# Risk model numerics
CLOSURE_FLOOR = 1e-12
PER_100K = 100_000


def configure_logging(level: str = None):
    """Configure root logging for scripts and the CLI"""
    logging.basicConfig(level=(level or LOG_LEVEL).upper(), format=LOG_FORMAT)
