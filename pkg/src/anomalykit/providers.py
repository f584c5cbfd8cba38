"""Provider contracts: chat completion, text embedding, visual validation.

Three interchangeable backend families:

* ``live``    — OpenAI-compatible HTTP endpoint (chat + embeddings).
* ``replay``  — recorded responses keyed by a canonical request digest.
* ``offline`` — deterministic scripted backends (template chat, hashing
  embedder, keyword-rule vision) requiring no network or weights.

All calls are appended to a shared call log (digest + latency) behind a
lock so concurrent pipeline workers can share one provider set.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import canonical_digest, normalize_name
from .errors import BudgetExceeded, ReplayMiss, TransportError
from .offline_chat import OfflineChatBackend

ENV_ENDPOINT = "ANOMALYKIT_ENDPOINT"
ENV_API_KEY = "ANOMALYKIT_API_KEY"
ENV_MODEL = "ANOMALYKIT_MODEL"

EMBED_DIM = 256


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    messages: tuple[tuple[str, str], ...]  # (speaker_role, content)
    temperature: float = 0.2
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.messages:
            raise ValueError("ChatRequest needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def digest(self) -> str:
        return canonical_digest(
            {
                "system": self.system_prompt,
                "messages": [list(m) for m in self.messages],
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            }
        )


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class VisualVerdict:
    approved: bool
    rationale: str = ""


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


class CallLog:
    """Append-only provider call log, shared across workers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: list[dict] = []

    def record(self, backend: str, kind: str, digest: str, latency_s: float):
        with self._lock:
            self._entries.append(
                {"backend": backend, "kind": kind, "digest": digest, "latency_s": latency_s}
            )

    def entries(self) -> list[dict]:
        with self._lock:
            return list(self._entries)

    def digest(self) -> str:
        payload = [(e["backend"], e["kind"], e["digest"]) for e in self.entries()]
        return canonical_digest(payload)


class TokenBucket:
    """Simple token-bucket rate limiter for live API hygiene."""

    def __init__(self, capacity: float = 10.0, refill_per_s: float = 2.0):
        self.capacity = capacity
        self.refill_per_s = refill_per_s
        self._tokens = capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self):
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(
                    self.capacity, self._tokens + (now - self._last) * self.refill_per_s
                )
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.refill_per_s
            time.sleep(wait)


class _Metered:
    """Shared budget/logging plumbing for all providers."""

    def __init__(self, backend_name: str, log: CallLog | None = None,
                 budget: int | None = None):
        self.backend_name = backend_name
        self.log = log if log is not None else CallLog()
        self.budget = budget
        self._calls = 0
        self._lock = threading.Lock()

    def _meter(self, kind: str, digest: str, started: float):
        with self._lock:
            self._calls += 1
            if self.budget is not None and self._calls > self.budget:
                raise BudgetExceeded(
                    f"{self.backend_name}: call cap {self.budget} exceeded"
                )
        self.log.record(self.backend_name, kind, digest, time.monotonic() - started)


# ---------------------------------------------------------------------------
# Chat providers
# ---------------------------------------------------------------------------


class OfflineChatProvider(_Metered):
    """Deterministic scripted chat; see offline_chat.OfflineChatBackend."""

    is_scripted = True

    def __init__(self, seed: int = 0, log: CallLog | None = None, budget: int | None = None):
        super().__init__("offline-chat", log, budget)
        self._backend = OfflineChatBackend(seed)

    def chat(self, request: ChatRequest) -> str:
        started = time.monotonic()
        text = self._backend.complete(request.messages)
        self._meter("chat", request.digest(), started)
        return text


class ReplayChatProvider(_Metered):
    """Returns recorded responses keyed by request digest."""

    is_scripted = True

    def __init__(self, store_path: str | Path, log: CallLog | None = None,
                 budget: int | None = None):
        super().__init__("replay-chat", log, budget)
        self._store = load_replay_store(store_path)

    def chat(self, request: ChatRequest) -> str:
        started = time.monotonic()
        digest = request.digest()
        if digest not in self._store:
            raise ReplayMiss(f"no recorded chat response for digest {digest[:12]}...")
        self._meter("chat", digest, started)
        return self._store[digest]


class RecordingChatProvider:
    """Wraps another chat provider and appends (digest, response) records."""

    def __init__(self, inner, record_path: str | Path):
        self.inner = inner
        self.record_path = Path(record_path)
        self._lock = threading.Lock()

    @property
    def is_scripted(self):
        return getattr(self.inner, "is_scripted", False)

    def chat(self, request: ChatRequest) -> str:
        text = self.inner.chat(request)
        rec = json.dumps({"digest": request.digest(), "response": text}, ensure_ascii=False)
        with self._lock, self.record_path.open("a", encoding="utf-8") as fh:
            fh.write(rec + "\n")
        return text


class LiveChatProvider(_Metered):
    """OpenAI-compatible /chat/completions client."""

    is_scripted = False

    def __init__(self, endpoint: str, model: str, api_key: str = "",
                 log: CallLog | None = None, budget: int | None = None,
                 bucket: TokenBucket | None = None, timeout: float = 60.0):
        super().__init__("live-chat", log, budget)
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.bucket = bucket or TokenBucket()
        self.timeout = timeout

    def chat(self, request: ChatRequest) -> str:
        import httpx

        self.bucket.acquire()
        started = time.monotonic()
        wire_messages = [{"role": "system", "content": request.system_prompt}]
        for role, content in request.messages:
            wire_role = "assistant" if role == "agent" else role
            wire_messages.append({"role": wire_role, "content": content})
        body = {
            "model": self.model,
            "messages": wire_messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(
                f"{self.endpoint}/chat/completions",
                json=body,
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except Exception as exc:
            raise TransportError(f"chat call failed: {exc}") from exc
        self._meter("chat", request.digest(), started)
        return text


# ---------------------------------------------------------------------------
# Embedding providers
# ---------------------------------------------------------------------------


class HashingEmbeddingProvider(_Metered):
    """Character-3-gram feature hashing into a 256-dim L2-normalized vector.

    Deterministic and order-sensitive enough to rank texts by surface
    similarity; no weights required.
    """

    is_scripted = True

    def __init__(self, dim: int = EMBED_DIM, log: CallLog | None = None,
                 budget: int | None = None):
        super().__init__("offline-embed", log, budget)
        self.dim = dim

    def _embed_one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        padded = f"  {text.lower()}  "
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3]
            h = hashlib.md5(gram.encode("utf-8")).digest()
            idx = int.from_bytes(h[:4], "big") % self.dim
            sign = 1.0 if h[4] % 2 == 0 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        started = time.monotonic()
        out = [EmbeddingVector(tuple(self._embed_one(t))) for t in texts]
        self._meter("embed", canonical_digest(texts), started)
        return out


class LiveEmbeddingProvider(_Metered):
    """OpenAI-compatible /embeddings client."""

    is_scripted = False

    def __init__(self, endpoint: str, model: str, api_key: str = "",
                 log: CallLog | None = None, budget: int | None = None,
                 bucket: TokenBucket | None = None, timeout: float = 60.0):
        super().__init__("live-embed", log, budget)
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.bucket = bucket or TokenBucket()
        self.timeout = timeout

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        import httpx

        if not texts:
            raise ValueError("embed() needs at least one text")
        self.bucket.acquire()
        started = time.monotonic()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(
                f"{self.endpoint}/embeddings",
                json={"model": self.model, "input": texts},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            data = resp.json()["data"]
            out = [EmbeddingVector(tuple(item["embedding"])) for item in data]
        except Exception as exc:
            raise TransportError(f"embedding call failed: {exc}") from exc
        dims = {v.dim for v in out}
        if len(dims) != 1:
            raise TransportError(f"embedding backend returned mixed dims {dims}")
        self._meter("embed", canonical_digest(texts), started)
        return out


# ---------------------------------------------------------------------------
# Vision providers
# ---------------------------------------------------------------------------

# Words in task text that name actions or glue, not objects the scene must show.
_NON_OBJECT_WORDS = {
    "store", "place", "put", "move", "pick", "keep", "close", "shut", "turn",
    "switch", "open", "safely", "away", "onto", "into", "from", "with", "the",
    "and", "off", "out", "reach", "floor", "robot", "must", "needs", "their",
    "near", "while", "that", "this", "stays", "clear", "fully", "still",
}


def required_object_words(task_name: str) -> list[str]:
    words = []
    for w in normalize_name(task_name).split():
        if len(w) > 3 and w not in _NON_OBJECT_WORDS and w not in words:
            words.append(w)
    return words


class OfflineVisionProvider(_Metered):
    """Keyword-rule visual validator.

    Approves iff every object word of the task name appears somewhere in
    the asset annotations; otherwise rejects naming the first missing word.
    """

    is_scripted = True

    def __init__(self, log: CallLog | None = None, budget: int | None = None):
        super().__init__("offline-vision", log, budget)

    def validate_scene_image(self, task_name: str, task_description: str,
                             asset_annotations: list[str],
                             image_ref: str | None = None) -> VisualVerdict:
        if not task_name or not task_description:
            raise ValueError("task_name and task_description must be non-empty")
        started = time.monotonic()
        joined = normalize_name(" ".join(asset_annotations))
        missing = [w for w in required_object_words(task_name) if w not in joined]
        digest = canonical_digest([task_name, task_description, asset_annotations])
        self._meter("vision", digest, started)
        if missing:
            return VisualVerdict(
                approved=False,
                rationale=f"annotations do not show required object: {missing[0]}",
            )
        return VisualVerdict(approved=True, rationale="all required objects annotated")


class ReplayVisionProvider(_Metered):
    """Recorded visual verdicts keyed by input digest."""

    is_scripted = True

    def __init__(self, store_path: str | Path, log: CallLog | None = None,
                 budget: int | None = None):
        super().__init__("replay-vision", log, budget)
        self._store = load_replay_store(store_path)

    def validate_scene_image(self, task_name, task_description, asset_annotations,
                             image_ref=None) -> VisualVerdict:
        started = time.monotonic()
        digest = canonical_digest([task_name, task_description, asset_annotations])
        if digest not in self._store:
            raise ReplayMiss(f"no recorded verdict for digest {digest[:12]}...")
        raw = json.loads(self._store[digest])
        self._meter("vision", digest, started)
        return VisualVerdict(approved=raw["approved"], rationale=raw.get("rationale", ""))


class LiveVisionProvider(_Metered):
    """Visual validation routed through the chat endpoint (yes/no answer)."""

    is_scripted = False

    def __init__(self, chat_provider: LiveChatProvider, log: CallLog | None = None,
                 budget: int | None = None):
        super().__init__("live-vision", log, budget)
        self._chat = chat_provider

    def validate_scene_image(self, task_name, task_description, asset_annotations,
                             image_ref=None) -> VisualVerdict:
        started = time.monotonic()
        prompt = (
            f"Task name: {task_name}\nTask description: {task_description}\n"
            f"Asset annotations:\n" + "\n".join(f"- {a}" for a in asset_annotations) + "\n"
            'Does the scene setup match the task? Answer "yes" or "no" with a reason.'
        )
        req = ChatRequest(
            system_prompt="You verify that a 3D scene matches a task description.",
            messages=(("user", prompt),),
            temperature=0.0,
            max_tokens=128,
        )
        answer = self._chat.chat(req)
        digest = canonical_digest([task_name, task_description, asset_annotations])
        self._meter("vision", digest, started)
        approved = answer.strip().lower().startswith("yes")
        return VisualVerdict(approved=approved, rationale=answer.strip())


# ---------------------------------------------------------------------------
# Replay store + provider set
# ---------------------------------------------------------------------------


def load_replay_store(path: str | Path) -> dict[str, str]:
    """Load a line-delimited digest -> response store."""
    store: dict[str, str] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            store[rec["digest"]] = rec["response"]
    return store


@dataclass
class ProviderSet:
    """One coherent bundle of chat, embedding, and vision backends."""

    chat: object
    embed: object
    vision: object
    log: CallLog = field(default_factory=CallLog)
    mode: str = "offline"


def make_providers(mode: str = "offline", seed: int = 0,
                   replay_path: str | Path | None = None,
                   record_path: str | Path | None = None,
                   endpoint: str | None = None, model: str | None = None,
                   embed_model: str = "text-embedding-3-small",
                   api_key: str | None = None,
                   budget: int | None = None) -> ProviderSet:
    """Build a provider set for one run.

    ``offline`` and ``replay`` always use the hashing embedder and rule
    vision, keeping runs fully deterministic.
    """
    log = CallLog()
    if mode == "offline":
        chat = OfflineChatProvider(seed=seed, log=log, budget=budget)
        emb = HashingEmbeddingProvider(log=log)
        vis = OfflineVisionProvider(log=log)
    elif mode == "replay":
        if replay_path is None:
            raise ValueError("replay mode needs a replay store path")
        chat = ReplayChatProvider(replay_path, log=log, budget=budget)
        emb = HashingEmbeddingProvider(log=log)
        vis = OfflineVisionProvider(log=log)
    elif mode == "live":
        endpoint = endpoint or os.environ.get(ENV_ENDPOINT, "")
        model = model or os.environ.get(ENV_MODEL, "gpt-4")
        api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        if not endpoint:
            raise ValueError(f"live mode needs an endpoint ({ENV_ENDPOINT})")
        chat = LiveChatProvider(endpoint, model, api_key, log=log, budget=budget)
        emb = LiveEmbeddingProvider(endpoint, embed_model, api_key, log=log)
        vis = LiveVisionProvider(chat, log=log)
    else:
        raise ValueError(f"unknown provider mode {mode!r}")
    if record_path is not None:
        chat = RecordingChatProvider(chat, record_path)
    return ProviderSet(chat=chat, embed=emb, vision=vis, log=log, mode=mode)
