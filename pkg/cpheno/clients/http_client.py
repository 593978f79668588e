import base64
import io
import threading
import time
from typing import Optional

import requests
from PIL import Image

from cpheno.clients.base_client import BaseClient
from cpheno.errors import ClientError


class HTTPClient(BaseClient):
    """
    JSON-over-HTTP model endpoint

    Request body is `{"prompt": ..., "image_b64": ...}` (image only when
    given, PNG), the response body must be `{"text": ...}`.
    """

    name = "http"

    def __init__(
        self,
        url: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        retries: int = 2,
        max_in_flight: int = 4,
        backoff: float = 1.0,
    ):
        self.url = url
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self.session = requests.Session()

    @staticmethod
    def encode_image(image: Image.Image) -> str:
        buffer = io.BytesIO()
        image.convert("RGB").save(buffer, format="PNG")
        return base64.b64encode(buffer.getvalue()).decode("ascii")

    def complete(self, prompt: str, image: Optional[Image.Image] = None) -> str:
        payload = {"prompt": prompt}
        if image is not None:
            payload["image_b64"] = self.encode_image(image)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}

        last_error = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * attempt)
            try:
                with self._slots:
                    response = self.session.post(
                        self.url, json=payload, headers=headers, timeout=self.timeout
                    )
                if response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                    self.log(f"attempt {attempt + 1} failed: {last_error}")
                    continue
                response.raise_for_status()
                text = response.json().get("text")
                if not isinstance(text, str):
                    raise ClientError(f"{self.url} returned no text field")
                return text
            except (requests.RequestException, ValueError) as e:
                last_error = str(e)
                self.log(f"attempt {attempt + 1} failed: {last_error}")
        raise ClientError(f"{self.url} failed after {self.retries + 1} attempts: {last_error}")
