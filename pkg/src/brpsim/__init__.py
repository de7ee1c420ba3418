"""BRP passive-balancing simulator under congestion-dependent imbalance pricing."""
from .config import SimConfig, load_config
from .orchestrator import CaseSpec, run_case

__version__ = "0.1.0"
__all__ = ["SimConfig", "load_config", "CaseSpec", "run_case", "__version__"]
