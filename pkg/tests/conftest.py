"""Shared fixtures: tiny image bytes, manifest/script builders, and an
instrumented stub HTTP server for transport-level tests."""

from __future__ import annotations

import base64
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from medbench.backends import BackendConfig
from medbench.datasets import DatasetManifest, Sample

# 1x1 grayscale images, embedded so tests need no imaging library.
TINY_PNG = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAAAAAA6fptVAAAACklEQVR4nGNoAAAAggCBd81ytgAAAABJRU5ErkJggg=="
)
TINY_JPEG = base64.b64decode(
    "/9j/4AAQSkZJRgABAQAAAQABAAD/2wBDAAgGBgcGBQgHBwcJCQgKDBQNDAsLDBkSEw8UHRofHh0aHBwgJC4nICIsIxwcKDcpLDAxNDQ0Hyc5PTgyPC4zNDL/wAALCAABAAEBAREA/8QAHwAAAQUBAQEBAQEAAAAAAAAAAAECAwQFBgcICQoL/8QAtRAAAgEDAwIEAwUFBAQAAAF9AQIDAAQRBRIhMUEGE1FhByJxFDKBkaEII0KxwRVS0fAkM2JyggkKFhcYGRolJicoKSo0NTY3ODk6Q0RFRkdISUpTVFVWV1hZWmNkZWZnaGlqc3R1dnd4eXqDhIWGh4iJipKTlJWWl5iZmqKjpKWmp6ipqrKztLW2t7i5usLDxMXGx8jJytLT1NXW19jZ2uHi4+Tl5ufo6erx8vP09fb3+Pn6/9oACAEBAAA/ACv/2Q=="
)

XRAY_LABELS = ("covid", "normal", "lung opacity", "viral pneumonia")


def write_manifest_files(
    root: Path,
    samples: list[tuple[str, str, str | None]],
    label_set: tuple[str, ...] = XRAY_LABELS,
    dataset_id: str = "xray-test",
    modality: str = "xray",
    create_images: bool = True,
) -> Path:
    """Write a manifest plus (optionally) one tiny PNG per sample.

    samples is a list of (sample_id, ground_truth, split-or-None).
    """
    root.mkdir(parents=True, exist_ok=True)
    images = root / "images"
    images.mkdir(exist_ok=True)
    lines = [
        f"dataset_id={dataset_id}",
        f"modality={modality}",
        f"labels={','.join(label_set)}",
    ]
    for sample_id, ground_truth, split in samples:
        rel = f"images/{sample_id}.png"
        if create_images:
            (root / rel).write_bytes(TINY_PNG)
        lines.append(f"{sample_id}\t{rel}\t{ground_truth}\t{split or '-'}")
    manifest_path = root / "manifest.txt"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


def make_manifest(
    samples: list[tuple[str, str, str | None]],
    label_set: tuple[str, ...] = XRAY_LABELS,
    root: Path = Path("/tmp"),
) -> DatasetManifest:
    """In-memory manifest for unit tests that never touch image files."""
    return DatasetManifest(
        dataset_id="inmem",
        modality="xray",
        label_set=label_set,
        samples=tuple(
            Sample(sample_id=sid, image_path=f"images/{sid}.png", ground_truth=gt, split=split)
            for sid, gt, split in samples
        ),
        root_dir=root,
    )


def write_mock_script(
    path: Path,
    entries: list[tuple[str, str, float | None, str]] | list[tuple[str, str, float | None, str, float]],
) -> Path:
    """Write a mock script; entries are (sample_id, label, confidence,
    response_text[, exec_time_s]) tuples."""
    lines = []
    for entry in entries:
        sample_id, label, confidence, text = entry[:4]
        conf_text = "-" if confidence is None else repr(confidence)
        text = text.replace("\\", "\\\\").replace("\n", "\\n").replace("\t", "\\t")
        fields = [sample_id, label, conf_text, text]
        if len(entry) == 5:
            fields.append(repr(entry[4]))
        lines.append("\t".join(fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def mock_backend(script_path: Path, backend_id: str = "mock-backend", max_concurrency: int = 4) -> BackendConfig:
    return BackendConfig(
        backend_id=backend_id,
        kind="mock",
        mock_script_path=script_path,
        max_concurrency=max_concurrency,
    )


class StubServer:
    """Threaded HTTP stub that records requests and tracks concurrency.

    The behavior callable receives the parsed JSON body and returns
    (status_code, body_dict). Set ``delay_s`` to hold each request open.
    """

    def __init__(self, behavior=None, delay_s: float = 0.0):
        self.behavior = behavior or (lambda body: (200, chat_body("ok")))
        self.delay_s = delay_s
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self._lock = threading.Lock()
        self._in_flight = 0
        self.peak_concurrency = 0

        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802 (http.server API)
                with stub._lock:
                    stub._in_flight += 1
                    stub.peak_concurrency = max(stub.peak_concurrency, stub._in_flight)
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    body = json.loads(self.rfile.read(length) or b"{}")
                    with stub._lock:
                        stub.requests.append({"path": self.path, "body": body})
                        stub.headers.append(dict(self.headers))
                    if stub.delay_s:
                        time.sleep(stub.delay_s)
                    status, reply = stub.behavior(body)
                    payload = json.dumps(reply).encode("utf-8")
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                finally:
                    with stub._lock:
                        stub._in_flight -= 1

            def log_message(self, *args) -> None:
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.01), daemon=True
        )

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self) -> "StubServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()


def chat_body(content: str) -> dict:
    """A minimal well-formed chat-completions response body."""
    return {"choices": [{"message": {"content": content}}]}


@pytest.fixture
def no_sleep(monkeypatch):
    """Disable retry backoff sleeping and record requested delays."""
    recorded: list[float] = []
    monkeypatch.setattr("medbench.backends._sleep", recorded.append)
    return recorded
