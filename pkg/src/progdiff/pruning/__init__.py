"""Structured channel pruning driven by interchangeable importance proxies."""

from .llm import (
    HISTORY_CAP,
    ChatEndpoint,
    LLMProxy,
    ProxyHTTPError,
    ProxyParseError,
    StubChatClient,
    extract_message_content,
    llm_proxy_build_prompt,
    llm_proxy_call,
    llm_proxy_parse,
)
from .proxies import (
    GroupDescriptor,
    MagnitudeProxy,
    Proxy,
    ProxyError,
    ProxyRequest,
    ProxyUnavailableError,
    RandomProxy,
    ScoreProxy,
    TaylorProxy,
    UnrepairableSchemeError,
    build_request,
    greedy_removal,
    magnitude_importance,
    propose_schemes,
    taylor_importance,
)
from .scheme import MemoryBank, MemoryBankEntry, PruningScheme, memory_bank_update
from .search import PruneOutcome, evaluate_scheme, iterative_prune, make_eval_batches, mean_loss

PROXY_KINDS = ("random", "magnitude", "taylor", "llm")


def make_proxy(kind: str, *, seed: int = 0, batch=None, schedule=None, client=None, archive_dir=None) -> Proxy:
    """Build a proxy by name."""
    if kind == "random":
        return RandomProxy(seed)
    if kind == "magnitude":
        return MagnitudeProxy(seed)
    if kind == "taylor":
        if batch is None or schedule is None:
            raise ValueError("the taylor proxy needs a batch and a schedule")
        return TaylorProxy(batch, schedule, seed)
    if kind == "llm":
        return LLMProxy(client, archive_dir)
    raise ValueError(f"unknown proxy {kind!r}; expected one of {PROXY_KINDS}")
