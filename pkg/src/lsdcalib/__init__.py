"""Linear surrogate diffusion for iterative camera-LiDAR extrinsic calibration."""

from .errors import ConfigError, ContractError, SingularityError
from .kernels import backend

__all__ = ["ConfigError", "ContractError", "SingularityError", "backend"]
__version__ = "0.1.0"
