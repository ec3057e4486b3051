"""OpenAI-compatible chat-completions client shared by the remote debate backend and the remote quality judge."""
import logging
import os
from dataclasses import dataclass
from datetime import timedelta
from typing import Dict, List, Optional

import openai
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_random_exponential

from dwlab.errors import BackendError, PreflightError


logger = logging.getLogger(__name__)

API_KEY_ENV = "DWLAB_API_KEY"

_TRANSIENT = (openai.APIConnectionError, openai.APITimeoutError, openai.RateLimitError, openai.InternalServerError)


@dataclass
class ChatEndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    timeout: timedelta = timedelta(seconds=120)
    max_attempts: int = 6
    api_key_env: str = API_KEY_ENV

    def api_key(self) -> Optional[str]:
        return os.environ.get(self.api_key_env)

    def preflight(self):
        if not self.api_key():
            raise PreflightError(f"remote endpoint {self.base_url} needs an API key in ${self.api_key_env}")
        if self.max_attempts < 1:
            raise PreflightError(f"max_attempts must be >= 1, got {self.max_attempts}")


class ChatClient:
    def __init__(self, config: ChatEndpointConfig):
        config.preflight()
        self.config = config
        self._client = openai.OpenAI(
            api_key=config.api_key(), base_url=config.base_url, timeout=config.timeout.total_seconds(), max_retries=0
        )
        self._create = retry(
            retry=retry_if_exception_type(_TRANSIENT),
            wait=wait_random_exponential(min=1, max=60),
            stop=stop_after_attempt(config.max_attempts),
            reraise=True,
        )(self._client.chat.completions.create)

    def complete(self, messages: List[Dict[str, str]], temperature: float) -> str:
        """Returns the first choice's message content."""
        try:
            response = self._create(model=self.config.model, messages=messages, temperature=temperature)
        except openai.OpenAIError as e:
            raise BackendError(f"{self.config.model}@{self.config.base_url}: {e}") from e

        if not response.choices:
            raise BackendError(f"{self.config.model}@{self.config.base_url}: response has no choices")
        return response.choices[0].message.content or ""
