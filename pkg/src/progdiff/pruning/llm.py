"""Language-model pruning proxy: prompt construction, transport and parsing.

The endpoint speaks the common chat-completion shape. Credentials come only
from the environment (``PD_LLM_URL``, ``PD_LLM_MODEL``, ``PD_LLM_KEY``).
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from ..allocation import format_ranges
from .proxies import Proxy, ProxyError, ProxyRequest, ProxyUnavailableError
from .scheme import PruningScheme

log = logging.getLogger(__name__)

HISTORY_CAP = 20

SYSTEM_MESSAGE = ("You are an expert in neural network compression. You answer with a single JSON "
                  "object in exactly the requested format.")


class ProxyParseError(ProxyError):
    """Proxy output could not be turned into a scheme; ``text`` keeps the raw reply."""

    def __init__(self, message: str, text: str):
        super().__init__(message)
        self.text = text


class ProxyHTTPError(ProxyError):
    def __init__(self, status: int, body: str):
        super().__init__(f"endpoint returned status {status}: {body[:200]}")
        self.status = status
        self.body = body


def _history_line(rank: int, entry) -> str:
    remove = json.dumps(entry.scheme.remove_map(), sort_keys=True)
    return f"{rank}. remove={remove} -> loss={entry.loss:.6g} flops={entry.flops}"


def llm_proxy_build_prompt(req: ProxyRequest) -> str:
    """Deterministic structured prompt with a fixed section order."""
    full = req.full_flops
    lines = [
        "ROLE",
        "You select hidden channels to remove from a diffusion denoising network (a multilayer "
        "perceptron that predicts noise) so that it meets a compute limit while staying accurate "
        "on one group of diffusion timesteps. Earlier attempts and their losses are listed under "
        "HISTORY; lower loss is better. Propose a new scheme that improves on them.",
        f"dataset: {req.dataset or 'unspecified'}",
        f"settings: {req.settings or 'unspecified'}",
        f"round: {req.round}",
        "",
        "ARCHITECTURE",
        "layer  kind    in    out   flops     flops_share",
    ]
    for l, kind, fan_in, fan_out, flops in req.layer_table():
        lines.append(f"{l:<6d} {kind:<7s} {fan_in:<5d} {fan_out:<5d} {flops:<9d} {flops / full:.4f}")
    hidden = ", ".join(f"{l} (width {w})" for l, w in enumerate(req.spec.hidden_widths))
    lines += [
        f"prunable hidden layers: {hidden}",
        "",
        "CONSTRAINT",
        f"flops_limit: {req.flops_limit:.10g}",
        f"current_flops: {full}",
        f"required_reduction: {max(0.0, full - req.flops_limit):.10g}",
        "",
        "GROUP",
        f"timesteps: {format_ranges(list(req.group.timesteps))} ({len(req.group.timesteps)} timesteps)",
        f"snr_db: {req.group.snr_min:.4f} .. {req.group.snr_max:.4f}",
        "",
        "HISTORY",
    ]
    history = req.history[:HISTORY_CAP]
    if history:
        lines += [_history_line(i + 1, e) for i, e in enumerate(history)]
    else:
        lines.append("none")
    lines += [
        "",
        "OUTPUT FORMAT",
        "Reply with exactly one JSON object:",
        '{"remove": {"<layer_index>": [channel indices]}}',
        "Keys are hidden layer indices as strings; values are channel indices to remove. "
        "Keep at least one channel in every layer.",
    ]
    return "\n".join(lines) + "\n"


@dataclass
class ChatEndpoint:
    url: str
    model: str
    key: str = ""
    temperature: float = 0.7
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0

    @classmethod
    def from_env(cls, **overrides) -> "ChatEndpoint":
        url = os.environ.get("PD_LLM_URL")
        model = os.environ.get("PD_LLM_MODEL")
        if not url or not model:
            raise ProxyUnavailableError("PD_LLM_URL and PD_LLM_MODEL must be set for the llm proxy")
        return cls(url, model, os.environ.get("PD_LLM_KEY", ""), **overrides)

    def __call__(self, prompt: str) -> str:
        return llm_proxy_call(self, prompt)


def llm_proxy_call(endpoint: ChatEndpoint, prompt: str, sleep=time.sleep, session=None) -> str:
    """POST one chat-completion request and return the raw response body.

    Transport failures and 5xx replies are retried with exponential backoff
    (``backoff * 2**attempt`` seconds); other non-success replies fail at once.
    """
    payload = {
        "model": endpoint.model,
        "messages": [{"role": "system", "content": SYSTEM_MESSAGE}, {"role": "user", "content": prompt}],
        "temperature": endpoint.temperature,
    }
    headers = {"Content-Type": "application/json"}
    if endpoint.key:
        headers["Authorization"] = f"Bearer {endpoint.key}"
    post = (session or requests).post
    last = None
    for attempt in range(endpoint.retries + 1):
        if attempt:
            delay = endpoint.backoff * 2 ** (attempt - 1)
            log.warning("llm endpoint attempt %d failed (%s); retrying in %.1fs", attempt, last, delay)
            sleep(delay)
        try:
            resp = post(endpoint.url, json=payload, headers=headers, timeout=endpoint.timeout)
        except requests.RequestException as exc:
            last = f"{type(exc).__name__}: {exc}"
            continue
        if resp.status_code >= 500:
            last = f"status {resp.status_code}"
            continue
        if not 200 <= resp.status_code < 300:
            raise ProxyHTTPError(resp.status_code, resp.text)
        return resp.text
    raise ProxyUnavailableError(f"llm endpoint unavailable after {endpoint.retries + 1} attempts ({last})")


def extract_message_content(body: str) -> str:
    """Assistant text from a chat-completion body; other text passes through."""
    try:
        data = json.loads(body)
    except ValueError:
        return body
    if isinstance(data, dict) and "choices" in data:
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProxyParseError("chat-completion body without message content", body)
    return body


def _first_json_object(text: str):
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    raise ProxyParseError("no JSON object found in proxy output", text)


def llm_proxy_parse(response: str, hidden_widths, round: int = 0) -> PruningScheme:
    """Parse ``{"remove": {"<layer>": [indices]}}`` out of free text."""
    obj = _first_json_object(response)
    if "remove" not in obj:
        # prose may contain an unrelated object before the answer
        for m in re.finditer(r'\{\s*"remove"', response):
            try:
                obj = json.JSONDecoder().raw_decode(response, m.start())[0]
                break
            except ValueError:
                continue
        else:
            raise ProxyParseError('JSON object lacks a "remove" map', response)
    remove = obj["remove"]
    if not isinstance(remove, dict):
        raise ProxyParseError('"remove" must map layer indices to lists', response)
    removed = [set() for _ in hidden_widths]
    for key, idx in remove.items():
        try:
            layer = int(key)
        except (TypeError, ValueError):
            raise ProxyParseError(f"layer key {key!r} is not an integer", response)
        if not 0 <= layer < len(hidden_widths):
            raise ProxyParseError(f"layer {layer} does not exist (hidden layers 0..{len(hidden_widths) - 1})",
                                  response)
        if not isinstance(idx, list):
            raise ProxyParseError(f"layer {layer}: expected a list of channel indices", response)
        for j in idx:
            if isinstance(j, bool) or not isinstance(j, int):
                raise ProxyParseError(f"layer {layer}: index {j!r} is not an integer", response)
            if not 0 <= j < hidden_widths[layer]:
                raise ProxyParseError(f"layer {layer} index {j} out of range (width {hidden_widths[layer]})",
                                      response)
            removed[layer].add(j)
        if len(removed[layer]) >= hidden_widths[layer]:
            raise ProxyParseError(f"layer {layer}: every channel removed", response)
    return PruningScheme(tuple(tuple(r) for r in removed), "llm", round)


class LLMProxy(Proxy):
    """Queries a chat client once per requested candidate with the same prompt.

    ``client`` is any callable mapping prompt text to a raw response body.
    Prompts and replies are archived under ``archive_dir`` when given.
    """

    name = "llm"

    def __init__(self, client=None, archive_dir=None):
        self.client = client if client is not None else ChatEndpoint.from_env()
        self.archive_dir = Path(archive_dir) if archive_dir is not None else None
        self.parse_failures = 0

    def _archive(self, name: str, text: str):
        if self.archive_dir is not None:
            self.archive_dir.mkdir(parents=True, exist_ok=True)
            (self.archive_dir / name).write_text(text)

    def propose(self, req, params):
        prompt = llm_proxy_build_prompt(req)
        self._archive(f"round{req.round:03d}_prompt.txt", prompt)
        out = []
        for c in range(req.n_candidates):
            body = self.client(prompt)
            self._archive(f"round{req.round:03d}_cand{c}_response.txt", body)
            try:
                out.append(llm_proxy_parse(extract_message_content(body), req.spec.hidden_widths, req.round))
            except ProxyParseError as exc:
                self.parse_failures += 1
                log.warning("round %d candidate %d: unusable llm reply: %s", req.round, c, exc)
        return out


class StubChatClient:
    """Offline, deterministic stand-in for a chat endpoint.

    Reads widths and the FLOPs limit back out of the prompt and removes a
    band of channels from every hidden layer, shifting the band on each
    call. Replies are wrapped in prose inside a chat-completion body, like a
    real model's. Proposals are deliberately approximate; validation repairs
    any that overshoot.
    """

    def __init__(self):
        self.calls = 0

    def __call__(self, prompt: str) -> str:
        widths = [int(w) for w in re.findall(r"\d+ \(width (\d+)\)", prompt)]
        limit = float(re.search(r"flops_limit: (\S+)", prompt).group(1))
        current = float(re.search(r"current_flops: (\S+)", prompt).group(1))
        keep_frac = min(1.0, (limit / current) ** 0.5)
        remove = {}
        for l, w in enumerate(widths):
            n = min(w - 1, int(round(w * (1 - keep_frac))))
            if n > 0:
                start = (self.calls * 7 + 3 * l) % w
                remove[str(l)] = sorted((start + j) % w for j in range(n))
        self.calls += 1
        content = "Here is my pruning plan:\n" + json.dumps({"remove": remove})
        return json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]})


__all__ = [
    "HISTORY_CAP",
    "ProxyParseError",
    "ProxyHTTPError",
    "ChatEndpoint",
    "LLMProxy",
    "StubChatClient",
    "llm_proxy_build_prompt",
    "llm_proxy_call",
    "llm_proxy_parse",
    "extract_message_content",
]
