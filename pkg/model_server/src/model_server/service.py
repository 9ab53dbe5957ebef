"""HTTP inference service speaking the harness's local_server protocol.

POST /classify  {image_b64, dataset_id} -> {label, confidence, probabilities}
GET  /health    -> {dataset_id, label_set, input_size}

Malformed requests get HTTP 400 with a reason; a dataset_id other than the
served one gets 404. Confidence is the max softmax probability and the
label is the argmax, ties broken by label_set order.
"""

from __future__ import annotations

import base64
import binascii
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from .net import SmallConvNet


@dataclass(frozen=True)
class ServedModel:
    dataset_id: str
    label_set: tuple[str, ...]
    weights_path: Path
    input_size: int


class ClassifyRequest(BaseModel):
    image_b64: str
    dataset_id: str


def load_served_model(weights_path: str | Path) -> tuple[ServedModel, SmallConvNet]:
    weights_path = Path(weights_path)
    if not weights_path.is_file():
        raise FileNotFoundError(f"weights file not found: {weights_path}")
    checkpoint = torch.load(weights_path, map_location="cpu", weights_only=True)
    metadata = checkpoint["metadata"]
    label_set = tuple(metadata["label_set"])
    model = SmallConvNet(len(label_set))
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    if model.head.out_features != len(label_set):
        raise ValueError(
            f"weights produce {model.head.out_features} outputs for {len(label_set)} labels"
        )
    served = ServedModel(
        dataset_id=metadata["dataset_id"],
        label_set=label_set,
        weights_path=weights_path,
        input_size=int(metadata["input_size"]),
    )
    return served, model


@torch.no_grad()
def predict_probabilities(model: SmallConvNet, image: Image.Image, input_size: int) -> np.ndarray:
    """Softmax probabilities in float64, renormalized to sum to 1."""
    resized = image.convert("L").resize((input_size, input_size), Image.BILINEAR)
    array = np.asarray(resized, dtype=np.float32) / 255.0
    tensor = torch.from_numpy(array).unsqueeze(0).unsqueeze(0)
    logits = model(tensor)[0].double()
    probabilities = torch.softmax(logits, dim=0).numpy()
    return probabilities / probabilities.sum()


def create_app(served: ServedModel, model: SmallConvNet) -> FastAPI:
    app = FastAPI(title="model-server", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def handle_bad_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": f"malformed request: {exc.errors()}"})

    @app.get("/health")
    def health() -> dict:
        return {
            "dataset_id": served.dataset_id,
            "label_set": list(served.label_set),
            "input_size": served.input_size,
        }

    @app.post("/classify")
    def classify(request: ClassifyRequest) -> JSONResponse:
        if request.dataset_id != served.dataset_id:
            return JSONResponse(
                status_code=404,
                content={"error": f"unknown dataset_id {request.dataset_id!r}; serving {served.dataset_id!r}"},
            )
        try:
            raw = base64.b64decode(request.image_b64, validate=True)
        except (binascii.Error, ValueError):
            return JSONResponse(status_code=400, content={"error": "image_b64 is not valid base64"})
        if not raw:
            return JSONResponse(status_code=400, content={"error": "image_b64 decodes to zero bytes"})
        try:
            with Image.open(io.BytesIO(raw)) as image:
                probabilities = predict_probabilities(model, image, served.input_size)
        except UnidentifiedImageError:
            return JSONResponse(status_code=400, content={"error": "decoded bytes are not a readable image"})
        best = int(np.argmax(probabilities))  # first max: label_set order breaks ties
        return JSONResponse(
            status_code=200,
            content={
                "label": served.label_set[best],
                "confidence": float(probabilities[best]),
                "probabilities": {
                    label: float(p) for label, p in zip(served.label_set, probabilities)
                },
            },
        )

    return app


def create_server(weights_path: str | Path, port: int, host: str = "127.0.0.1") -> uvicorn.Server:
    """Configured (not yet running) uvicorn server for the weights file."""
    served, model = load_served_model(weights_path)
    app = create_app(served, model)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    return uvicorn.Server(config)


def serve(weights_path: str | Path, port: int, host: str = "127.0.0.1") -> None:
    """Load weights and serve until interrupted."""
    create_server(weights_path, port, host).run()
