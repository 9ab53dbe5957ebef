"""Reference local CNN inference microservice for the benchmark harness."""

from .manifest import Manifest, ManifestSample, read_manifest
from .net import SmallConvNet
from .service import ServedModel, create_app, create_server, load_served_model, serve
from .training import Hyperparameters, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "Hyperparameters",
    "Manifest",
    "ManifestSample",
    "ServedModel",
    "SmallConvNet",
    "TrainResult",
    "create_app",
    "create_server",
    "load_served_model",
    "read_manifest",
    "serve",
    "train",
]
