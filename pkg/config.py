import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Run Configuration
    SEED = int(os.getenv("QSDLAB_SEED", 20240601))
    OUTPUT_DIR = os.getenv("QSDLAB_OUTPUT_DIR", "runs")
    LOG_LEVEL = os.getenv("QSDLAB_LOG_LEVEL", "INFO").upper()
    ARTIFACT_VERSION = os.getenv("ARTIFACT_VERSION", "1.0.0")

    # Replicas run concurrently through joblib; 1 keeps everything in-process
    MAX_WORKERS = int(os.getenv("MAX_WORKERS", 1))

    # Laplace exponent search
    # theta* may be +inf (gaussian / point-mass jumps): bracket searches stop here
    THETA_SEARCH_CAP = float(os.getenv("THETA_SEARCH_CAP", 1e3))
    VELOCITY_SEARCH_CAP = float(os.getenv("VELOCITY_SEARCH_CAP", 1e6))
    OPTIMIZER_XTOL = float(os.getenv("OPTIMIZER_XTOL", 1e-12))
    ROOT_XTOL = float(os.getenv("ROOT_XTOL", 1e-12))
    SAMPLER_XTOL = float(os.getenv("SAMPLER_XTOL", 1e-10))

    # Particle systems
    BRIDGE_CORRECTION = os.getenv("BRIDGE_CORRECTION", "true").lower() == "true"
    BBM_POPULATION_CAP = int(os.getenv("BBM_POPULATION_CAP", 100000))

    # Finite-state chains
    CHAIN_MAX_ITER = int(os.getenv("CHAIN_MAX_ITER", 200000))
    CHAIN_TOL = float(os.getenv("CHAIN_TOL", 1e-13))

    # PDE solvers
    CFL_SAFETY = float(os.getenv("CFL_SAFETY", 0.9))
    EDGE_TOLERANCE = float(os.getenv("EDGE_TOLERANCE", 1e-12))
    BOUNDARY_LEAK_TOLERANCE = float(os.getenv("BOUNDARY_LEAK_TOLERANCE", 1e-6))
    MASS_LEAK_TOLERANCE = float(os.getenv("MASS_LEAK_TOLERANCE", 1e-8))
    # Estimated discretization error above which generator residuals are flagged
    COARSE_GRID_TOLERANCE = float(os.getenv("COARSE_GRID_TOLERANCE", 1e-4))

    # Statistics
    KS_GRID_POINTS = int(os.getenv("KS_GRID_POINTS", 10000))

config = Config()
