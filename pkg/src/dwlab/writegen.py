"""
The depth/width creative-writing benchmark: K-sentence tasks built from K occupation keywords, where K is the depth
and the normalized Shannon entropy of the keywords' occupation groups, binned into quintiles, is the width.
Also holds the writing scorers: the rule-based standard score, quality judges and the composite score.
"""
import abc
import dataclasses
import logging
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import draccus
import numpy as np
from dataclasses_json import dataclass_json

from dwlab.errors import BackendError, ParameterError, UsageError
from dwlab.remote import ChatClient, ChatEndpointConfig
from dwlab.resources import DEFAULT_LEXICON, load_prompts
from dwlab.utils import fsspec_utils
from dwlab.utils.rng import derive_seed


logger = logging.getLogger(__name__)

DEFAULT_KS = (4, 8, 12, 16, 20)
N_GROUPS = 23
MIN_KEYWORDS_PER_GROUP = 20
N_QUINTILES = 5

QUALITY_MAX = 10.0


@dataclass_json
@dataclass(frozen=True)
class LexiconGroup:
    id: int
    name: str
    keywords: List[str]


@dataclass_json
@dataclass(frozen=True)
class Lexicon:
    version: str
    groups: List[LexiconGroup]
    description: str = ""

    def pool(self) -> List[Tuple[str, int]]:
        """Every (keyword, group id), group by group in file order."""
        return [(kw, g.id) for g in self.groups for kw in g.keywords]

    def validate(self, require_full: bool = True):
        if require_full and len(self.groups) != N_GROUPS:
            raise ParameterError(f"lexicon {self.version} has {len(self.groups)} groups, expected {N_GROUPS}")
        ids = [g.id for g in self.groups]
        if len(set(ids)) != len(ids):
            raise ParameterError(f"lexicon {self.version} has duplicate group ids")
        seen: Dict[str, int] = {}
        for g in self.groups:
            if require_full and len(g.keywords) < MIN_KEYWORDS_PER_GROUP:
                raise ParameterError(
                    f"group {g.id} ({g.name}) has {len(g.keywords)} keywords, expected >= {MIN_KEYWORDS_PER_GROUP}"
                )
            for kw in g.keywords:
                if not kw or kw != kw.lower() or kw != kw.strip():
                    raise ParameterError(f"keyword {kw!r} in group {g.id} must be non-empty, lowercase and trimmed")
                if kw in seen:
                    raise ParameterError(f"keyword {kw!r} appears in groups {seen[kw]} and {g.id}")
                seen[kw] = g.id


def load_lexicon(path: Optional[str] = None, require_full: bool = True) -> Lexicon:
    path = path or DEFAULT_LEXICON
    if not fsspec_utils.exists(path):
        raise UsageError(f"lexicon not found at {path}; pass --lexicon with a file shaped like {DEFAULT_LEXICON}")
    lexicon = Lexicon.from_dict(fsspec_utils.read_json(path))
    lexicon.validate(require_full=require_full)
    return lexicon


@dataclass_json
@dataclass(frozen=True)
class Keyword:
    text: str
    group: int


@dataclass_json
@dataclass(frozen=True)
class KeywordTask:
    id: str
    K: int
    keywords: List[Keyword]
    entropy_norm: float
    seed: int
    quintile: Optional[int] = None

    @property
    def keyword_texts(self) -> List[str]:
        return [k.text for k in self.keywords]

    @property
    def group_ids(self) -> List[int]:
        return [k.group for k in self.keywords]


def normalized_entropy(group_ids: Sequence, slot_indexed: bool = False) -> float:
    """
    H / log2(K) over the keywords' categories, with p(c) = m_c / K.

    The default sums once per category. `slot_indexed=True` sums once per slot, i.e. a category that fills m_c slots
    contributes m_c times; that reading agrees at the extremes but is not bounded by 1 in between.
    K <= 1 is defined as 0.
    """
    k = len(group_ids)
    if k <= 1:
        logger.debug(f"normalized entropy of {k} item(s) is 0 by convention")
        return 0.0

    counts = Counter(group_ids)
    h = 0.0
    for m in counts.values():
        p = m / k
        term = -p * math.log2(p)
        h += m * term if slot_indexed else term
    return h / math.log2(k)


def _natural_key(task_id: str):
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", task_id)]


def sample_sets(K: int, n: int, seed: int, lexicon: Lexicon, slot_indexed: bool = False) -> List[KeywordTask]:
    """
    n sets of K distinct keywords, drawn uniformly without replacement from the pooled lexicon. Set i draws from
    its own stream, derived from (seed, K, i).
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    pool = lexicon.pool()
    if K < 1 or K > len(pool):
        raise ParameterError(f"K must be in [1, {len(pool)}] for this lexicon, got {K}")

    tasks = []
    for i in range(n):
        set_seed = derive_seed(seed, "writegen/set", K, i)
        rng = np.random.default_rng(set_seed)
        picked = rng.choice(len(pool), size=K, replace=False)
        keywords = [Keyword(text=pool[j][0], group=pool[j][1]) for j in picked]
        tasks.append(
            KeywordTask(
                id=f"w-k{K}-{i}",
                K=K,
                keywords=keywords,
                entropy_norm=normalized_entropy([k.group for k in keywords], slot_indexed=slot_indexed),
                seed=set_seed,
            )
        )
    return tasks


def bin_quintiles(tasks: Sequence[KeywordTask]) -> List[KeywordTask]:
    """
    Sorts by (entropy_norm, id) and labels consecutive fifths 1..5. Returns the tasks in input order.
    """
    if len(tasks) == 0 or len(tasks) % N_QUINTILES != 0:
        raise ParameterError(f"quintile binning needs a positive multiple of {N_QUINTILES} tasks, got {len(tasks)}")

    size = len(tasks) // N_QUINTILES
    ordered = sorted(tasks, key=lambda t: (t.entropy_norm, _natural_key(t.id)))
    quintile = {t.id: rank // size + 1 for rank, t in enumerate(ordered)}
    return [dataclasses.replace(t, quintile=quintile[t.id]) for t in tasks]


def generate_dataset(
    Ks: Sequence[int],
    sets_per_k: int,
    seed: int,
    lexicon: Optional[Lexicon] = None,
    binning: bool = True,
    slot_indexed: bool = False,
) -> List[KeywordTask]:
    lexicon = lexicon or load_lexicon()
    out: List[KeywordTask] = []
    for K in Ks:
        tasks = sample_sets(K, sets_per_k, seed, lexicon, slot_indexed=slot_indexed)
        if binning:
            tasks = bin_quintiles(tasks)
        out.extend(tasks)
    return out


def write_dataset(tasks: Sequence[KeywordTask], path: str) -> int:
    return fsspec_utils.write_jsonl(path, (t.to_dict() for t in tasks))


def _check_loaded_task(task: KeywordTask, path: str) -> None:
    if len(task.keywords) != task.K:
        raise ParameterError(f"{path}: task {task.id} has {len(task.keywords)} keywords but K={task.K}")
    if task.quintile is not None and not 1 <= task.quintile <= N_QUINTILES:
        raise ParameterError(f"{path}: task {task.id} has quintile {task.quintile}")
    # either entropy reading may have been used at generation time
    readings = [normalized_entropy(task.group_ids, slot_indexed=s) for s in (False, True)]
    if not any(math.isclose(task.entropy_norm, h, rel_tol=1e-9, abs_tol=1e-12) for h in readings):
        raise ParameterError(
            f"{path}: task {task.id} stores entropy_norm={task.entropy_norm}; its keyword groups give {readings[0]}"
        )


def load_dataset(path: str) -> List[KeywordTask]:
    tasks = [KeywordTask.from_dict(row) for row in fsspec_utils.iter_jsonl(path)]
    for task in tasks:
        _check_loaded_task(task, path)
    return tasks


# Scoring

ABBREVIATIONS = frozenset(
    "mr. mrs. ms. dr. prof. sr. jr. st. vs. etc. e.g. i.e. inc. ltd. co. no. mt. approx. dept. fig.".split()
)

_SENTENCE_END = re.compile(r"[.!?]+(?=\s+[\"'“(\[]?[A-Z]|[\"'”)\]]*\s*$)")
_WORD = re.compile(r"[a-z0-9]+(?:['’-][a-z0-9]+)*")


def split_sentences(text: str) -> List[str]:
    """Splits after . ! ? when followed by whitespace and an uppercase letter (or the end), except after a known
    abbreviation."""
    text = (text or "").strip()
    if not text:
        return []

    sentences = []
    start = 0
    for m in _SENTENCE_END.finditer(text):
        preceding = text[start : m.end()].split()
        if preceding and preceding[-1].lower() in ABBREVIATIONS:
            continue
        sentence = text[start : m.end()].strip()
        if sentence:
            sentences.append(sentence)
        start = m.end()

    rest = text[start:].strip()
    if rest:
        sentences.append(rest)
    return sentences


def _keyword_pattern(keyword: str) -> re.Pattern:
    tokens = keyword.split()
    body = r"\s+".join(re.escape(t) for t in tokens)
    return re.compile(r"(?<!\w)" + body + r"(?!\w)", re.IGNORECASE)


def keyword_present(text: str, keyword: str) -> bool:
    return _keyword_pattern(keyword).search(text or "") is not None


def tokens(text: str) -> List[str]:
    return _WORD.findall((text or "").lower())


@dataclass_json
@dataclass(frozen=True)
class StandardScore:
    standard: float
    sentence_count: int
    sentence_subscore: float
    coverage: float
    missing_keywords: List[str]


def standard_score(essay: str, K: int, keywords: Sequence[str]) -> StandardScore:
    """0.5 * max(0, 1 - |sentences - K| / K) + 0.5 * (fraction of keywords present)."""
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    sentences = split_sentences(essay)
    n = len(sentences)
    sentence_subscore = max(0.0, 1.0 - abs(n - K) / K)

    missing = [kw for kw in keywords if not keyword_present(essay, kw)]
    coverage = (len(keywords) - len(missing)) / len(keywords) if keywords else 0.0
    return StandardScore(
        standard=0.5 * sentence_subscore + 0.5 * coverage,
        sentence_count=n,
        sentence_subscore=sentence_subscore,
        coverage=coverage,
        missing_keywords=missing,
    )


def composite_score(standard: float, quality: float) -> float:
    if not 0.0 <= standard <= 1.0:
        raise ParameterError(f"standard score must be in [0, 1], got {standard}")
    if not 0.0 <= quality <= QUALITY_MAX:
        raise ParameterError(f"quality score must be in [0, 10], got {quality}")
    return standard * quality


@dataclass_json
@dataclass(frozen=True)
class WritingScore:
    standard: float
    quality: float
    composite: float
    diagnostics: Dict


class JudgeBackend(abc.ABC):
    """Scores an essay's quality in [0, 10]."""

    name: str = "judge"

    @abc.abstractmethod
    def score(self, essay: str, task: KeywordTask) -> float:
        raise NotImplementedError


def _band_score(cv: float, low: float = 0.2, high: float = 0.6) -> float:
    if cv < low:
        return QUALITY_MAX * cv / low
    if cv <= high:
        return QUALITY_MAX
    return max(0.0, QUALITY_MAX * (1.0 - (cv - high) / high))


class HeuristicJudge(JudgeBackend):
    """
    Offline stand-in for an LLM judge. It averages three proxies, each in [0, 10]:

    * sentence-length variety: the coefficient of variation of sentence lengths, full marks inside [0.2, 0.6]
      and falling off linearly outside (0 with fewer than two sentences);
    * vocabulary: 10 * type-token ratio, scaled down for texts shorter than 40 words;
    * keyword dispersion: 10 * (sentences containing a required keyword) / max(sentences, K).

    It measures surface properties only and makes no claim to agree with a human or model judge.
    """

    name = "heuristic"

    def proxies(self, essay: str, task: KeywordTask) -> Dict[str, float]:
        sentences = split_sentences(essay)
        words = tokens(essay)

        if len(sentences) >= 2:
            lengths = np.array([len(tokens(s)) for s in sentences], dtype=np.float64)
            mean = lengths.mean()
            variety = _band_score(float(lengths.std() / mean)) if mean > 0 else 0.0
        else:
            variety = 0.0

        if words:
            vocabulary = QUALITY_MAX * (len(set(words)) / len(words)) * min(1.0, len(words) / 40.0)
        else:
            vocabulary = 0.0

        patterns = [_keyword_pattern(k) for k in task.keyword_texts]
        with_keyword = sum(1 for s in sentences if any(p.search(s) for p in patterns))
        denominator = max(len(sentences), task.K, 1)
        dispersion = QUALITY_MAX * with_keyword / denominator

        return {"variety": variety, "vocabulary": vocabulary, "dispersion": dispersion}

    def score(self, essay: str, task: KeywordTask) -> float:
        p = self.proxies(essay, task)
        return float(np.mean([p["variety"], p["vocabulary"], p["dispersion"]]))


_SCORE_RE = re.compile(r"SCORE\s*[:=]\s*(\d+(?:\.\d+)?)", re.IGNORECASE)
_ANY_NUMBER_RE = re.compile(r"(?<![\w.])(\d+(?:\.\d+)?)(?![\w])")


def parse_judge_score(reply: str) -> Optional[float]:
    found = _SCORE_RE.findall(reply or "") or _ANY_NUMBER_RE.findall(reply or "")
    if not found:
        return None
    return min(QUALITY_MAX, max(0.0, float(found[-1])))


class RemoteJudge(JudgeBackend):
    """Asks an OpenAI-compatible model for a 0-10 rating. Failures propagate; there is no fallback."""

    name = "remote"

    def __init__(self, client: ChatClient, prompts: Optional[dict] = None, temperature: float = 0.0):
        self.client = client
        self.prompts = (prompts or load_prompts())["judge"]
        self.temperature = temperature

    def score(self, essay: str, task: KeywordTask) -> float:
        messages = [
            {"role": "system", "content": self.prompts["system"]},
            {
                "role": "user",
                "content": self.prompts["user"].format(keywords=", ".join(task.keyword_texts), essay=essay),
            },
        ]
        reply = self.client.complete(messages, temperature=self.temperature)
        score = parse_judge_score(reply)
        if score is None:
            raise BackendError(f"judge reply has no score: {reply[:200]!r}", task_id=task.id)
        return score


@dataclass
class JudgeConfig(draccus.ChoiceRegistry, abc.ABC):
    @abc.abstractmethod
    def build(self) -> JudgeBackend:
        raise NotImplementedError

    def preflight(self):
        pass

    @classmethod
    def default_choice_name(cls) -> Optional[str]:
        return "heuristic"


@JudgeConfig.register_subclass("heuristic")
@dataclass
class HeuristicJudgeConfig(JudgeConfig):
    def build(self) -> JudgeBackend:
        return HeuristicJudge()


@JudgeConfig.register_subclass("remote")
@dataclass
class RemoteJudgeConfig(JudgeConfig):
    endpoint: ChatEndpointConfig = dataclasses.field(default_factory=ChatEndpointConfig)
    temperature: float = 0.0

    def preflight(self):
        self.endpoint.preflight()

    def build(self) -> JudgeBackend:
        return RemoteJudge(ChatClient(self.endpoint), temperature=self.temperature)


def judge_quality(essay: str, task: KeywordTask, judge: JudgeBackend) -> float:
    if not (essay or "").strip():
        return 0.0
    quality = judge.score(essay, task)
    if not 0.0 <= quality <= QUALITY_MAX:
        raise BackendError(f"judge {judge.name} returned {quality}, outside [0, 10]", task_id=task.id)
    return quality


def judge_many(
    items: Sequence[Tuple[str, KeywordTask]], judge: JudgeBackend, max_in_flight: int = 1
) -> Dict[str, float]:
    """Quality scores keyed by task id, with at most `max_in_flight` judge calls running at once."""

    def one(item):
        essay, task = item
        return task.id, judge_quality(essay, task, judge)

    if max_in_flight <= 1:
        return dict(one(item) for item in items)
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return dict(pool.map(one, items))


def score_essay(essay: str, task: KeywordTask, judge: JudgeBackend) -> WritingScore:
    std = standard_score(essay, task.K, task.keyword_texts)
    quality = judge_quality(essay, task, judge)
    return WritingScore(
        standard=std.standard,
        quality=quality,
        composite=composite_score(std.standard, quality),
        diagnostics={
            "sentence_count": std.sentence_count,
            "sentence_subscore": std.sentence_subscore,
            "coverage": std.coverage,
            "missing_keywords": std.missing_keywords,
            "judge": judge.name,
        },
    )


def extract_essay(text: str) -> str:
    """The text after the last "ESSAY:" line, or the whole message when there is none."""
    marker = re.compile(r"^\s*ESSAY\s*:\s*", re.IGNORECASE | re.MULTILINE)
    matches = list(marker.finditer(text or ""))
    if not matches:
        return (text or "").strip()
    return text[matches[-1].end() :].strip()
