import functools
import os

from dwlab.utils import fsspec_utils


RESOURCE_DIR = os.path.dirname(os.path.abspath(__file__))

DEFAULT_LEXICON = os.path.join(RESOURCE_DIR, "lexicon_v1.json")
DEFAULT_PROMPTS = os.path.join(RESOURCE_DIR, "prompts_v1.json")


@functools.lru_cache(maxsize=8)
def load_prompts(path: str = DEFAULT_PROMPTS) -> dict:
    """Prompt templates keyed by family ("math", "writing", "judge") and role."""
    return fsspec_utils.read_json(path)
