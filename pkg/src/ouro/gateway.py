"""Decision-model gateway: one interface over live and scripted backends.

Every model interaction in the runtime goes through `Gateway.call_json_llm`,
which asks for structured JSON output, coerces what comes back, retries
non-parseable records, and debits a shared budget. The scripted backend
replays a fixed response queue, which makes whole evolution runs
deterministic and testable offline.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

# Re-asks per record when the model output cannot be parsed as JSON.
PARSE_RETRIES = 2


class GatewayError(Exception):
    pass


class BudgetExhaustedError(GatewayError):
    """A spend would cross the cost or call cap."""


class BackendUnavailableError(GatewayError):
    """The backend cannot produce a response (network failure, empty script)."""


@dataclass
class CallCost:
    input_tokens: int = 0
    output_tokens: int = 0
    amount: float = 0.0

    def __add__(self, other: "CallCost") -> "CallCost":
        return CallCost(
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
            self.amount + other.amount,
        )

    @classmethod
    def from_dict(cls, d: dict | None) -> "CallCost":
        d = d or {}
        return cls(
            int(d.get("input_tokens", 0)),
            int(d.get("output_tokens", 0)),
            float(d.get("amount", 0.0)),
        )


@dataclass
class DecisionRequest:
    model_id: str
    messages: list[dict]
    temperature: float = 0.0
    num_of_response: int = 1
    persona_role: str = "assistant"
    return_keys: tuple[str, ...] = ("answer",)
    requirements: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if not self.return_keys:
            raise ValueError("return_keys must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.num_of_response < 1:
            raise ValueError("num_of_response must be >= 1")
        self.return_keys = tuple(self.return_keys)


@dataclass
class DecisionResponse:
    records: list[dict]
    raw_texts: list[str]
    cost: CallCost
    missing_keys: list[list[str]] = field(default_factory=list)

    def flagged(self, index: int) -> bool:
        return bool(self.missing_keys[index]) if index < len(self.missing_keys) else False


@dataclass
class Budget:
    """Spend tracker for one evolution run. Caps of None mean unlimited."""

    max_cost_units: float | None = 15.0
    max_calls: int | None = None
    spent_cost: float = 0.0
    spent_calls: int = 0
    exhausted: bool = False

    def __post_init__(self):
        self._lock = threading.Lock()

    def spend(self, cost: CallCost) -> bool:
        """Debit one call. Returns True (and latches) when a cap is reached."""
        with self._lock:
            self.spent_cost += cost.amount
            self.spent_calls += 1
            if self.max_calls is not None and self.spent_calls >= self.max_calls:
                self.exhausted = True
            if self.max_cost_units is not None and self.spent_cost >= self.max_cost_units - 1e-9:
                self.exhausted = True
            return self.exhausted

    def would_exceed(self, quote: CallCost | None) -> bool:
        if self.exhausted:
            return True
        if quote is not None and self.max_cost_units is not None:
            if self.spent_cost + quote.amount > self.max_cost_units + 1e-9:
                return True
        return False


def extract_json(text: str) -> dict:
    """Pull the outermost JSON object out of free-form model text."""
    try:
        parsed = json.loads(text)
        if isinstance(parsed, dict):
            return parsed
    except (json.JSONDecodeError, TypeError):
        pass
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escape = False
        for i in range(start, len(text)):
            ch = text[i]
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_str = not in_str
            elif not in_str:
                if ch == "{":
                    depth += 1
                elif ch == "}":
                    depth -= 1
                    if depth == 0:
                        try:
                            parsed = json.loads(text[start : i + 1])
                            if isinstance(parsed, dict):
                                return parsed
                        except json.JSONDecodeError:
                            break
        start = text.find("{", start + 1)
    raise ValueError("no JSON object found in text")


def render_llm_messages(req: DecisionRequest) -> list[dict]:
    """Compose the full message list sent to a live model."""
    keys = ", ".join(f'"{k}"' for k in req.return_keys)
    system = (
        f"You are a {req.persona_role}.\n"
        f"Reply with a single JSON object containing exactly these keys: {keys}.\n"
    )
    if req.requirements:
        system += f"Requirements:\n{req.requirements}\n"
    return [{"role": "system", "content": system}] + list(req.messages)


@dataclass
class BackendReply:
    """One raw backend exchange, before coercion."""

    records: list[dict] | None
    raw_texts: list[str]
    cost: CallCost


class ScriptedBackend:
    """Deterministic backend that replays a fixed queue of responses.

    Each entry supplies either pre-parsed `records` or `raw_texts` to be
    coerced, plus an optional `cost`. On queue exhaustion the backend either
    repeats the final entry or raises, per policy.
    """

    def __init__(self, entries: list[dict], on_exhausted: str = "repeat_last"):
        if on_exhausted not in ("repeat_last", "raise"):
            raise ValueError(f"unknown exhaustion policy: {on_exhausted}")
        self._entries = [dict(e) for e in entries]
        self._pos = 0
        self._policy = on_exhausted
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(data["entries"], on_exhausted=data.get("policy", "repeat_last"))

    def _next_entry(self) -> dict:
        if self._pos < len(self._entries):
            entry = self._entries[self._pos]
            self._pos += 1
            return entry
        if self._policy == "repeat_last" and self._entries:
            return self._entries[-1]
        raise BackendUnavailableError("scripted backend queue exhausted")

    def _peek_entry(self) -> dict | None:
        if self._pos < len(self._entries):
            return self._entries[self._pos]
        if self._policy == "repeat_last" and self._entries:
            return self._entries[-1]
        return None

    def quote_cost(self, req: DecisionRequest) -> CallCost | None:
        with self._lock:
            entry = self._peek_entry()
        if entry is None:
            return None
        return CallCost.from_dict(entry.get("cost"))

    def complete(self, req: DecisionRequest) -> BackendReply:
        with self._lock:
            entry = self._next_entry()
        cost = CallCost.from_dict(entry.get("cost"))
        if "records" in entry:
            records = [dict(r) for r in entry["records"]]
            return BackendReply(records=records, raw_texts=[json.dumps(r) for r in records], cost=cost)
        raw = [str(t) for t in entry.get("raw_texts", [])]
        return BackendReply(records=None, raw_texts=raw, cost=cost)


class LiveBackend:
    """Chat-completion client for any OpenAI-compatible endpoint.

    The API key is read from an environment variable, never from config
    files. Costs are computed from the configured per-model price table.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "OURO_API_KEY",
        price_table: dict | None = None,
        timeout: float = 60.0,
        transport=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.price_table = price_table or {}
        self.timeout = timeout
        self._transport = transport

    def quote_cost(self, req: DecisionRequest) -> CallCost | None:
        return None  # live costs are known only after the call

    def _price(self, model_id: str, input_tokens: int, output_tokens: int) -> float:
        prices = self.price_table.get(model_id, {})
        return (
            input_tokens / 1000.0 * float(prices.get("input_per_1k", 0.0))
            + output_tokens / 1000.0 * float(prices.get("output_per_1k", 0.0))
        )

    def complete(self, req: DecisionRequest) -> BackendReply:
        import httpx

        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise BackendUnavailableError(f"API key environment variable {self.api_key_env} is not set")
        payload = {
            "model": req.model_id,
            "messages": render_llm_messages(req),
            "temperature": req.temperature,
            "n": req.num_of_response,
        }
        last_err: Exception | None = None
        for _ in range(3):
            try:
                with httpx.Client(transport=self._transport, timeout=self.timeout) as client:
                    resp = client.post(
                        f"{self.base_url}/chat/completions",
                        json=payload,
                        headers={"Authorization": f"Bearer {api_key}"},
                    )
                resp.raise_for_status()
                body = resp.json()
                texts = [c["message"]["content"] for c in body.get("choices", [])]
                usage = body.get("usage", {})
                in_tok = int(usage.get("prompt_tokens", 0))
                out_tok = int(usage.get("completion_tokens", 0))
                cost = CallCost(in_tok, out_tok, self._price(req.model_id, in_tok, out_tok))
                return BackendReply(records=None, raw_texts=texts, cost=cost)
            except httpx.HTTPError as exc:
                last_err = exc
        raise BackendUnavailableError(f"backend unreachable after retries: {last_err}")


class Gateway:
    """Budgeted structured-output calls, with strong/weak model tiers.

    Improvement-loop calls use the strong tier; solver calls use the weak
    tier. In constrained mode solver calls are pinned to the weak tier and
    per-call model overrides are ignored.
    """

    def __init__(
        self,
        backend,
        budget: Budget | None = None,
        model_strong: str = "strong",
        model_weak: str = "weak",
        decide_samples: int = 1,
        constrained: bool = False,
    ):
        self.backend = backend
        self.budget = budget
        self.model_strong = model_strong
        self.model_weak = model_weak
        self.decide_samples = decide_samples
        self.constrained = constrained

    def call_json_llm(self, req: DecisionRequest) -> DecisionResponse:
        """Return exactly req.num_of_response coerced records.

        Raises BudgetExhaustedError before dispatch when the budget is spent
        (or a quoted cost would cross the cap); raises BackendUnavailableError
        when the backend fails outright.
        """
        budget = self.budget
        if budget is not None and budget.would_exceed(self.backend.quote_cost(req)):
            raise BudgetExhaustedError(
                f"budget exhausted: spent {budget.spent_cost:.4f}/{budget.max_cost_units} "
                f"cost units, {budget.spent_calls}/{budget.max_calls} calls"
            )
        reply = self.backend.complete(req)
        total_cost = reply.cost
        if budget is not None:
            budget.spend(reply.cost)

        records: list[dict] = []
        raw_texts = list(reply.raw_texts)
        if reply.records is not None:
            records = list(reply.records)
        else:
            for text in reply.raw_texts:
                parsed = self._coerce(text, req)
                if parsed is None:
                    # re-ask for this record, up to PARSE_RETRIES times
                    for _ in range(PARSE_RETRIES):
                        if budget is not None and budget.would_exceed(self.backend.quote_cost(req)):
                            break
                        retry_req = DecisionRequest(
                            model_id=req.model_id,
                            messages=req.messages
                            + [
                                {"role": "assistant", "content": text},
                                {"role": "user", "content": "Reply with only the JSON object."},
                            ],
                            temperature=req.temperature,
                            num_of_response=1,
                            persona_role=req.persona_role,
                            return_keys=req.return_keys,
                            requirements=req.requirements,
                        )
                        try:
                            retry = self.backend.complete(retry_req)
                        except BackendUnavailableError:
                            break
                        total_cost = total_cost + retry.cost
                        if budget is not None:
                            budget.spend(retry.cost)
                        if retry.records is not None and retry.records:
                            parsed = dict(retry.records[0])
                        else:
                            text = retry.raw_texts[0] if retry.raw_texts else ""
                            raw_texts.append(text)
                            parsed = self._coerce(text, req)
                        if parsed is not None:
                            break
                records.append(parsed if parsed is not None else {})

        # pad or trim to the requested sample count
        while len(records) < req.num_of_response:
            records.append(dict(records[-1]) if records else {})
        records = records[: req.num_of_response]

        missing: list[list[str]] = []
        for rec in records:
            gaps = [k for k in req.return_keys if k not in rec]
            for k in gaps:
                rec[k] = ""
            missing.append(gaps)
        return DecisionResponse(records=records, raw_texts=raw_texts, cost=total_cost, missing_keys=missing)

    @staticmethod
    def _coerce(text: str, req: DecisionRequest) -> dict | None:
        try:
            return extract_json(text)
        except ValueError:
            return None

    def decide_call(
        self,
        messages: list[dict],
        return_keys=("analysis", "actions"),
        requirements: str = "",
        persona_role: str = "agent architect",
        temperature: float = 0.0,
        num_of_response: int | None = None,
    ) -> DecisionResponse:
        req = DecisionRequest(
            model_id=self.model_strong,
            messages=messages,
            temperature=temperature,
            num_of_response=num_of_response or self.decide_samples,
            persona_role=persona_role,
            return_keys=tuple(return_keys),
            requirements=requirements,
        )
        return self.call_json_llm(req)

    def solver_call(
        self,
        messages: list[dict],
        return_keys=("reasoning", "answer"),
        requirements: str = "",
        persona_role: str = "assistant",
        temperature: float = 0.0,
        num_of_response: int = 1,
        model: str | None = None,
    ) -> DecisionResponse:
        if self.constrained or model is None:
            model = self.model_weak
        req = DecisionRequest(
            model_id=model,
            messages=messages,
            temperature=temperature,
            num_of_response=num_of_response,
            persona_role=persona_role,
            return_keys=tuple(return_keys),
            requirements=requirements,
        )
        return self.call_json_llm(req)


class SolverContext:
    """Minimal ctx for running a solver policy outside an evolution run."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    def llm(
        self,
        messages,
        return_keys=("reasoning", "answer"),
        requirements: str = "",
        persona_role: str = "assistant",
        temperature: float = 0.0,
        num_of_response: int = 1,
        model: str | None = None,
    ) -> list[dict]:
        resp = self.gateway.solver_call(
            messages=list(messages),
            return_keys=tuple(return_keys),
            requirements=requirements,
            persona_role=persona_role,
            temperature=temperature,
            num_of_response=num_of_response,
            model=model,
        )
        return [dict(r) for r in resp.records]
