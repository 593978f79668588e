import logging
import os
from typing import Optional, Tuple

from PIL import Image

from cpheno.errors import ConfigError

logger = logging.getLogger(__name__)


class BaseClient:
    """Base class of the text refiner and vision-text aligner clients.
    All clients answer a prompt, optionally with an image, with plain text.
    """

    name = "base"

    def complete(self, prompt: str, image: Optional[Image.Image] = None) -> str:
        raise NotImplementedError

    def log(self, txt):
        logger.debug(f"[{self.name}] {txt}")


def make_clients(curation) -> Tuple[BaseClient, BaseClient]:
    """
    Build the (refiner, aligner) pair for a curation config

    Parameters:
        curation (CurationConfig): Uses mock_llm, endpoint urls, api key,
            timeout, retries and the in-flight cap; urls and key fall back
            to CPHENO_LLM_URL, CPHENO_MLLM_URL and CPHENO_API_KEY

    Returns:
        tuple: (refiner, aligner)
    """
    from cpheno.clients.http_client import HTTPClient
    from cpheno.clients.mock_client import IdentityAligner, RuleBasedRefiner

    if curation.mock_llm:
        return RuleBasedRefiner(), IdentityAligner()

    llm_url = curation.llm_url or os.environ.get("CPHENO_LLM_URL")
    mllm_url = curation.mllm_url or os.environ.get("CPHENO_MLLM_URL")
    api_key = curation.api_key or os.environ.get("CPHENO_API_KEY")
    if not llm_url or not mllm_url:
        raise ConfigError(
            "LLM endpoints not configured: set curation.llm_url / curation.mllm_url, "
            "CPHENO_LLM_URL / CPHENO_MLLM_URL, or enable curation.mock_llm"
        )
    options = dict(
        api_key=api_key,
        timeout=curation.timeout,
        retries=curation.retries,
        max_in_flight=curation.max_in_flight,
    )
    return HTTPClient(llm_url, **options), HTTPClient(mllm_url, **options)
