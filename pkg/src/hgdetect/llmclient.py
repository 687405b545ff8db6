"""LLM endpoint plumbing: prompt templates, response parsing, an on-disk
response cache, a chat-completion HTTP client, and a deterministic offline
mock client."""

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass

import httpx

from .lexicon import DRUG_KEYWORDS, PROMO_TERMS

log = logging.getLogger(__name__)


class AugmentationError(RuntimeError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class UserText:
    """The three text fields describing a user account."""

    username: str
    user_id: str
    profile: str

    def __post_init__(self):
        for field_name in ("username", "user_id", "profile"):
            if not getattr(self, field_name).strip():
                raise ParseError(f"user text field {field_name!r} is empty")
        if not self.user_id.startswith("@"):
            object.__setattr__(self, "user_id", "@" + self.user_id)

    def render(self) -> str:
        return f"Username: {self.username}; User ID: {self.user_id}; User Profile: {self.profile}"

    @classmethod
    def parse(cls, text: str) -> "UserText":
        """Parse the labeled-line/labeled-field grammar:
        Username: ...; User ID: ...; User Profile: ...
        Fields may be separated by ';' or newlines."""
        patterns = {
            "username": r"Username\s*:\s*([^;\n]+)",
            "user_id": r"User ID\s*:\s*([^;\n]+)",
            # the profile may itself contain ';' so it runs to end of text
            "profile": r"User Profile\s*:\s*(.+)\s*$",
        }
        fields = {}
        for attr, pat in patterns.items():
            m = re.search(pat, text, re.DOTALL if attr == "profile" else 0)
            if not m or not m.group(1).strip():
                raise ParseError(f"missing {attr.replace('_', ' ')!r} field")
            fields[attr] = m.group(1).strip().rstrip(";").strip()
        return cls(**fields)


# ---------------------------------------------------------------------------
# Prompt templates.

NODE_INSTRUCTION = (
    "Act as an expert in social network analysis, your task is to generate a "
    "synthetic user based on the given context, including username, user ID, "
    "and user profile. The generated synthetic user information should capture "
    "the key information in the original user while ensuring variability."
)

EDGE_INSTRUCTION = (
    "Act as an expert in social network analysis; given the original user "
    "information, the connected neighbor information with neighbor type, and "
    "synthetic user information generated from the original user, your task is "
    "to determine which neighbors the synthetic user should connect to."
)

RETRY_SUFFIX = {
    "node": ("\nRespond exactly in the format: Username: <username>; "
             "User ID: <user id>; User Profile: <profile>."),
    "edge": "\nRespond exactly in the format: Selected Neighbors: [<index>, ...].",
}


def render_node_prompt(t: UserText) -> str:
    """Context block for synthetic-user generation."""
    return f"Username: {t.username}; User ID: {t.user_id}; User Profile: {t.profile}."


def render_edge_prompt(original: UserText, synthetic: UserText, neighbor_type: str, neighbor_texts) -> str:
    items = "\n".join(f"{i}. Text Content: {txt}" for i, txt in enumerate(neighbor_texts, start=1))
    return (
        f"Original User Information: {original.render()};\n"
        f"Neighbor Type: {neighbor_type.capitalize()};\n"
        f"Neighbor Information:\n{items}\n"
        f"Synthetic User Information: {synthetic.render()}."
    )


def parse_selected_neighbors(text: str, n_candidates: int):
    """Parse a 'Selected Neighbors: [..]' list; validate and de-duplicate.

    Out-of-range indices are dropped with a warning; the list may be empty.
    """
    m = re.search(r"Selected Neighbors\s*:\s*\[([^\]]*)\]", text)
    if not m:
        raise ParseError("no 'Selected Neighbors: [..]' list in response")
    body = m.group(1).strip()
    selected = []
    if body:
        for piece in body.split(","):
            piece = piece.strip().rstrip(".")
            if not re.fullmatch(r"-?\d+", piece):
                raise ParseError(f"non-integer neighbor index {piece!r}")
            idx = int(piece)
            if not 1 <= idx <= n_candidates:
                log.warning("dropping out-of-range neighbor index %d (1..%d)", idx, n_candidates)
                continue
            if idx not in selected:
                selected.append(idx)
    return sorted(selected)


# ---------------------------------------------------------------------------
# Response cache: append-only line-delimited JSON keyed by prompt hash.

def prompt_hash(model: str, instruction: str, context: str) -> str:
    blob = "\x00".join((model, instruction, context))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._entries = {}
        if path is not None and os.path.exists(path):
            with open(path, encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._entries[rec["prompt_hash"]] = rec["response"]

    def get(self, key: str):
        return self._entries.get(key)

    def put(self, key: str, model: str, response: str) -> None:
        with self._lock:
            self._entries[key] = response
            if self.path is not None:
                rec = {"prompt_hash": key, "model": model, "response": response,
                       "timestamp": time.time()}
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Clients.  Both expose complete(instruction, context) -> response text and a
# .calls counter so cache behavior is observable.

class HttpLlmClient:
    """Chat-completion-style client: system = template instruction, user =
    context block, temperature 0.  Credentials come from an environment
    variable; transport failures retry with exponential backoff."""

    def __init__(self, base_url: str, model: str, api_key_env: str = "LLM_API_KEY",
                 timeout: float = 60.0, transport_retries: int = 3, transport=None):
        key = os.environ.get(api_key_env)
        if not key:
            raise AugmentationError(
                f"missing LLM credentials: environment variable {api_key_env!r} is unset"
            )
        self.model = model
        self.calls = 0
        self._retries = transport_retries
        self._client = httpx.Client(
            base_url=base_url,
            headers={"Authorization": f"Bearer {key}"},
            timeout=timeout,
            transport=transport,
        )

    def complete(self, instruction: str, context: str) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": instruction},
                {"role": "user", "content": context},
            ],
            "temperature": 0,
        }
        delay = 1.0
        for attempt in range(self._retries):
            try:
                resp = self._client.post("/chat/completions", json=payload)
                resp.raise_for_status()
                self.calls += 1
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                if attempt == self._retries - 1:
                    raise AugmentationError(f"LLM endpoint failed after {self._retries} attempts: {exc}")
                log.warning("transport failure (%s); retrying in %.1fs", exc, delay)
                time.sleep(delay)
                delay *= 2


_SUFFIX_TABLE = ("ete", "hub", "lab", "spot", "base", "line", "shop", "zone")

_PARAPHRASE = {
    "online dispensary": "Vendor of",
    "premium": "top-shelf",
    "dm me for menu": "menu on request",
    "order now": "DM to order",
    "discount for followers": "in stock",
    "must be 18+": "adults only",
    "nature lover": "outdoors enthusiast",
    "coffee addict": "espresso devotee",
}


def _salient_tokens(text: str) -> set:
    """Drug keywords, promo terms, and hashtag tokens, lowercased."""
    tokens = set(re.findall(r"[a-z0-9]+", text.lower()))
    hashtags = {h.lower() for h in re.findall(r"#(\w+)", text)}
    return (tokens & (DRUG_KEYWORDS | PROMO_TERMS)) | hashtags


class MockLlmClient:
    """Deterministic offline stand-in for the LLM endpoint.

    Synthetic-user generation perturbs the username/ID via a fixed suffix
    table and paraphrases the profile by dictionary substitution, preserving
    all hashtags and drug keywords.  Edge selection picks the candidates
    whose text shares at least one salient token (drug keyword, promotional
    term, or hashtag) with the synthetic profile.
    """

    model = "mock-llm"

    def __init__(self):
        self.calls = 0

    def complete(self, instruction: str, context: str) -> str:
        self.calls += 1
        if "generate a synthetic user" in instruction:
            return self._generate_user(context)
        if "determine which neighbors" in instruction:
            return self._select_edges(context)
        raise AugmentationError("mock client received an unrecognized instruction")

    def _generate_user(self, context: str) -> str:
        t = UserText.parse(context)
        pick = int.from_bytes(hashlib.blake2b(t.username.encode(), digest_size=2).digest(), "little")
        suffix = _SUFFIX_TABLE[pick % len(_SUFFIX_TABLE)]
        username = f"{t.username.rstrip('.')}_{suffix}"
        user_id = f"@{t.user_id.lstrip('@').rstrip('.')}_{suffix}"
        profile = t.profile
        for phrase, replacement in _PARAPHRASE.items():
            profile = re.sub(re.escape(phrase), replacement, profile, flags=re.IGNORECASE)
        return f"Username: {username}\nUser ID: {user_id}\nUser Profile: {profile}"

    def _select_edges(self, context: str) -> str:
        m = re.search(r"Neighbor Information:\n(.*?)\nSynthetic User Information:", context, re.DOTALL)
        if not m:
            raise AugmentationError("mock client could not locate the neighbor list")
        items = re.findall(r"^\d+\. Text Content: (.*)$", m.group(1), re.MULTILINE)
        synth = re.search(r"Synthetic User Information: (.*)$", context, re.DOTALL).group(1)
        profile_tokens = _salient_tokens(synth)
        selected = [str(i) for i, txt in enumerate(items, start=1)
                    if _salient_tokens(txt) & profile_tokens]
        return f"Selected Neighbors: [{', '.join(selected)}]."


# ---------------------------------------------------------------------------
# Cached, retrying call wrapper.

def cached_call(client, cache: ResponseCache, kind: str, instruction: str, context: str,
                parser, retries: int = 3):
    """Call the client through the cache; on parse failure, retry up to
    `retries` times with a reinforcing format suffix.  Returns
    (parsed, exchanges) where exchanges record every (prompt, response) pair.
    """
    exchanges = []
    last_error = None
    for attempt in range(retries):
        ctx = context + RETRY_SUFFIX[kind] * attempt
        key = prompt_hash(getattr(client, "model", "unknown"), instruction, ctx)
        response = cache.get(key)
        if response is None:
            response = client.complete(instruction, ctx)
            cache.put(key, getattr(client, "model", "unknown"), response)
        exchanges.append({"kind": kind, "prompt_hash": key, "instruction": instruction,
                          "context": ctx, "response": response})
        try:
            return parser(response), exchanges
        except ParseError as exc:
            last_error = exc
            log.warning("parse failure on %s call (attempt %d/%d): %s", kind, attempt + 1, retries, exc)
    raise AugmentationError(f"{kind} response unparseable after {retries} attempts: {last_error}")
