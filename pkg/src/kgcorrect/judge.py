"""LLM-as-judge scoring (groundedness and answer similarity).

The prompt templates are frozen verbatim, worked examples included; rendering
only ever touches the {{placeholder}} sites. The chat endpoint is pluggable:
an HTTP chat-completion client for live runs, a canned-reply mock for
deterministic offline runs.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, Optional

DEFAULT_API_KEY_ENV = "TRUSTFUL_JUDGE_API_KEY"

PARSE_CLEAN = "clean-integer"
PARSE_EXTRACTED = "extracted-integer"
PARSE_FAILED = "failed"


class JudgeError(Exception):
    pass


class JudgeTransportError(JudgeError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


GROUNDEDNESS_SYSTEM = (
    "You are an AI assistant. You will be given the definition of an evaluation metric for "
    "assessing the quality of an answer in a question-answering task. Your job is to compute "
    "an accurate evaluation score using the provided evaluation metric. You should return a "
    "single integer value between 1 to 5 representing the evaluation metric. You will include "
    "no other text or information."
)

GROUNDEDNESS_USER_TEMPLATE = """You will be presented with a CONTEXT and an ANSWER about that CONTEXT. You need to decide whether the ANSWER is entailed by the CONTEXT by choosing one of the following rating:
1. 5: The ANSWER follows logically from the information contained in the CONTEXT.
2. 1: The ANSWER is logically false from the information contained in the CONTEXT.
3. An integer score between 1 and 5, and if such an integer score does not exist, use 1: It is not possible to determine whether the ANSWER is true or false without further information.

Read the passage of information thoroughly and select the correct answer from the three answer labels. Read the CONTEXT thoroughly to ensure you know what the CONTEXT entails. Note that the ANSWER is generated by a computer system, so it can contain certain symbols, which should not be a negative factor in the evaluation.

Independent Examples:
Example Task #1 Input:
{"CONTEXT": "Some are reported as not having been wanted at all.", "QUESTION": "", "ANSWER": "All are reported as being completely and fully wanted."}
Example Task #1 Output:
1
Example Task #2 Input:
{"CONTEXT": "Ten new television shows appeared during the month of September. Five of the shows were sitcoms, three were hourlong dramas, and two were news-magazine shows. By January, only seven of these new shows were still on the air. Five of the shows that remained were sitcoms.", "QUESTION": "", "ANSWER": "At least one of the shows that were cancelled was an hourlong drama."}
Example Task #2 Output:
5
Example Task #3 Input:
{"CONTEXT": "In Quebec, an allophone is a resident, usually an immigrant, whose mother tongue or home language is neither French nor English.", "QUESTION": "", "ANSWER": "In Quebec, an allophone is a resident, usually an immigrant, whose mother tongue or home language is not French."}
Example Task #3 Output:
5
Example Task #4 Input:
{"CONTEXT": "Some are reported as not having been wanted at all.", "QUESTION": "", "ANSWER": "All are reported as being completely and fully wanted."}
Example Task #4 Output:
1
Actual Task Input:
{"CONTEXT": {{context}}, "QUESTION": "", "ANSWER": {{response}}}
Reminder: The return values for each task should be correctly formatted as an integer between 1 and 5. Do not repeat the context and question.
Actual Task Output:"""

SIMILARITY_SYSTEM = (
    "You are an AI assistant. You will be given the definition of an evaluation metric for "
    "assessing the quality of an answer in a question-answering task. Your job is to compute "
    "an accurate evaluation score using the provided evaluation metric. You should return a "
    "single integer value between 1 to 5 representing the evaluation metric. You will include "
    "no other text or information."
)

SIMILARITY_USER_TEMPLATE = """Equivalence, as a metric, measures the similarity between the predicted answer and the correct answer. If the information and content in the predicted answer is similar or equivalent to the correct answer, then the value of the Equivalence metric should be high, else it should be low. Given the question, correct answer, and predicted answer, determine the value of the Equivalence metric using the following rating scale:
One star: the predicted answer is not at all similar to the correct answer
Two stars: the predicted answer is mostly not similar to the correct answer
Three stars: the predicted answer is somewhat similar to the correct answer
Four stars: the predicted answer is mostly similar to the correct answer
Five stars: the predicted answer is completely similar to the correct answer

This rating value should always be an integer between 1 and 5. So the rating produced should be 1, 2, 3, 4, or 5. The examples below show the Equivalence score for a question, a correct answer, and a predicted answer.

Question: What is the role of ribosomes?
Correct answer: Ribosomes are cellular structures responsible for protein synthesis. They interpret the genetic information carried by messenger RNA (mRNA) and use it to assemble amino acids into proteins.
Predicted answer: Ribosomes participate in carbohydrate breakdown by removing nutrients from complex sugar molecules.
Stars: 1

Question: Why did the Titanic sink?
Correct answer: The Titanic sank after it struck an iceberg during its maiden voyage in 1912. The impact caused the ship's hull to breach, allowing water to flood into the vessel. The ship's design, lifeboat shortage, and lack of timely rescue efforts contributed to the tragic loss of life.
Predicted answer: The sinking of the Titanic was a result of a large iceberg collision. This caused the ship to take on water and eventually sink, leading to the death of many passengers due to a shortage of lifeboats and insufficient rescue attempts.
Stars: 2

Question: What are the health benefits of regular exercise?
Correct answer: Regular exercise can help maintain a healthy weight, increase muscle and bone strength, and reduce the risk of chronic diseases. It also promotes mental well-being by reducing stress and improving overall mood.
Predicted answer: Routine physical activity can contribute to maintaining ideal body weight, enhancing muscle and bone strength, and preventing chronic illnesses. In addition, it supports mental health by alleviating stress and augmenting general mood.
Stars: 5

Question: {{query}}
Correct answer: {{ground_truth}}
Predicted answer: {{response}}
Stars:"""


def _check_rendered(text: str) -> str:
    if "{{" in text or "}}" in text:
        raise JudgeError("unreplaced placeholder in rendered prompt")
    return text


def render_groundedness_prompt(context: str, response: str) -> tuple[str, str]:
    """CONTEXT/ANSWER fields are JSON-quoted, matching the example tasks."""
    user = GROUNDEDNESS_USER_TEMPLATE.replace(
        "{{context}}", json.dumps(context, ensure_ascii=False)).replace(
        "{{response}}", json.dumps(response, ensure_ascii=False))
    return GROUNDEDNESS_SYSTEM, _check_rendered(user)


def render_similarity_prompt(query: str, ground_truth: str, response: str) -> tuple[str, str]:
    user = SIMILARITY_USER_TEMPLATE.replace("{{query}}", query).replace(
        "{{ground_truth}}", ground_truth).replace("{{response}}", response)
    return SIMILARITY_SYSTEM, _check_rendered(user)


@dataclass(frozen=True)
class JudgeVerdict:
    score: Optional[int]
    raw: str
    parse_path: str
    retries: int = 0


# standalone: not glued to word chars, not a decimal ("Score: 4." hits, "3.5" does not)
_STANDALONE_INT_RE = re.compile(r"(?<![\w.])([1-5])(?!\w)(?!\.\d)")


def parse_verdict(raw: str, retries: int = 0) -> JudgeVerdict:
    stripped = raw.strip()
    if re.fullmatch(r"[1-5]", stripped):
        return JudgeVerdict(score=int(stripped), raw=raw, parse_path=PARSE_CLEAN, retries=retries)
    m = _STANDALONE_INT_RE.search(raw)
    if m:
        return JudgeVerdict(score=int(m.group(1)), raw=raw, parse_path=PARSE_EXTRACTED, retries=retries)
    return JudgeVerdict(score=None, raw=raw, parse_path=PARSE_FAILED, retries=retries)


@dataclass
class LlmEndpointConfig:
    base_url: str
    model: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0

    def __post_init__(self):
        if self.temperature != 0.0:
            raise ValueError("judge temperature is pinned to 0")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    retries: int


def request_hash(system: str, user: str) -> str:
    digest = hashlib.sha256()
    digest.update(system.encode("utf-8"))
    digest.update(b"\x1e")
    digest.update(user.encode("utf-8"))
    return digest.hexdigest()


class MockJudgeClient:
    """Offline judge: canned replies keyed by request hash."""

    def __init__(self, replies: Optional[dict[str, str]] = None, default: Optional[str] = None):
        self.replies = dict(replies or {})
        self.default = default
        self.calls = 0

    @classmethod
    def from_fixture(cls, path) -> "MockJudgeClient":
        """Fixture file: one {"hash": ..., "reply": ...} object per line;
        a {"default": ...} line sets the fallback reply."""
        replies: dict[str, str] = {}
        default = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise JudgeError(f"bad mock fixture line {lineno}: {exc}") from exc
                if "default" in rec:
                    default = rec["default"]
                else:
                    replies[rec["hash"]] = rec["reply"]
        return cls(replies, default=default)

    def complete(self, system: str, user: str) -> CompletionResult:
        self.calls += 1
        key = request_hash(system, user)
        if key in self.replies:
            return CompletionResult(self.replies[key], retries=0)
        if self.default is not None:
            return CompletionResult(self.default, retries=0)
        raise JudgeError(f"mock client has no reply for request hash {key}")


class HttpJudgeClient:
    """Chat-completion POST client with bounded retries and growing backoff."""

    def __init__(self, config: LlmEndpointConfig,
                 transport: Optional[Callable] = None,
                 sleep: Callable[[float], None] = time.sleep,
                 backoff_base: float = 0.5):
        self.config = config
        self._transport = transport or self._http_post
        self._sleep = sleep
        self._backoff_base = backoff_base
        api_key = os.environ.get(config.api_key_env)
        if not api_key:
            raise JudgeError(
                f"judge API key not found in environment variable {config.api_key_env}")
        self._api_key = api_key

    def _http_post(self, payload: dict) -> str:
        request = urllib.request.Request(
            self.config.base_url,
            data=json.dumps(payload).encode("utf-8"),
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self._api_key}",
            },
        )
        with urllib.request.urlopen(request, timeout=self.config.timeout) as response:
            body = json.loads(response.read().decode("utf-8"))
        return body["choices"][0]["message"]["content"]

    def complete(self, system: str, user: str) -> CompletionResult:
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.config.temperature,
        }
        last_error: Optional[Exception] = None
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                self._sleep(self._backoff_base * attempt)
            try:
                return CompletionResult(self._transport(payload), retries=attempt)
            except (urllib.error.URLError, OSError, TimeoutError, json.JSONDecodeError,
                    KeyError) as exc:
                last_error = exc
        raise JudgeTransportError(
            f"judge endpoint failed after {self.config.max_retries + 1} attempts: {last_error}",
            attempts=self.config.max_retries + 1,
        )


def judge_groundedness(record, client) -> JudgeVerdict:
    system, user = render_groundedness_prompt(record.context, record.candidate)
    result = client.complete(system, user)
    return parse_verdict(result.text, retries=result.retries)


def judge_similarity(record, client) -> JudgeVerdict:
    system, user = render_similarity_prompt(record.prompt, record.reference, record.candidate)
    result = client.complete(system, user)
    return parse_verdict(result.text, retries=result.retries)
