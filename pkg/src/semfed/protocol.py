"""Round orchestration with exact byte metering over an in-process transport.

One round runs four phases: each client optionally retrains on its
private data, every client answers every public prompt, the server
embeds the responses and runs per-prompt consensus, and the resulting
(prompt id, pseudo-label) pairs are broadcast back for a joint training
pass.  Uploads are the UTF-8 byte lengths of the response payloads;
downloads are the pseudo-label bytes times the number of receiving
clients.  Message framing, ids and serialization overhead are
deliberately excluded so measured totals match the closed-form
calculators byte for byte.

Consensus failures on a prompt (for example, every client generated an
un-embeddable empty string) never abort the round: the prompt is
dropped from that round's broadcast and the reason is recorded on the
transcript.

Determinism: clients are mutated only by their own worker, per-prompt
consensus is pure, and all transcript collections are sorted before
emission, so output is byte-identical regardless of the worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .clients import Client, PrivateDataset, TrainingWeights
from .consensus import (
    ClusterParams,
    SelectionStrategy,
    ZeroSumError,
    consensus_for_prompt,
)
from .encoder import EncoderConfig, ZeroVectorError, encode, normalize
from .privacy import PrivacyLedger, RoundBudget, record_round, total_budget

__all__ = [
    "ConfigError",
    "Prompt",
    "PublicPromptSet",
    "ResponseRecord",
    "PromptConsensus",
    "PromptError",
    "RoundTranscript",
    "SessionParams",
    "SessionReport",
    "meter_message",
    "make_response",
    "run_round",
    "run_session",
    "transcript_to_dict",
    "report_to_dict",
]


class ConfigError(ValueError):
    """Raised for invalid session structure before any work happens."""


def meter_message(payload: str) -> int:
    """Size of a message payload: UTF-8 byte length, no framing."""
    return len(payload.encode("utf-8"))


@dataclass(frozen=True)
class Prompt:
    prompt_id: str
    text: str


@dataclass(frozen=True)
class PublicPromptSet:
    """Ordered public prompts with unique ids."""

    prompts: tuple[Prompt, ...]

    def __post_init__(self) -> None:
        ids = [p.prompt_id for p in self.prompts]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ConfigError(f"duplicate prompt ids: {dupes}")

    def __len__(self) -> int:
        return len(self.prompts)

    @staticmethod
    def from_jsonl(path: str | Path, limit: int | None = None) -> "PublicPromptSet":
        """Read {"prompt_id", "text"} rows; ``limit`` caps how many are used."""
        prompts: list[Prompt] = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
                try:
                    prompts.append(Prompt(prompt_id=str(row["prompt_id"]), text=str(row["text"])))
                except (KeyError, TypeError) as exc:
                    raise ConfigError(f"{path}:{lineno}: expected prompt_id and text fields") from exc
                if limit is not None and len(prompts) >= limit:
                    break
        return PublicPromptSet(prompts=tuple(prompts))


@dataclass(frozen=True)
class ResponseRecord:
    """One client's answer to one prompt, with its metered upload size."""

    client: int
    prompt_id: str
    text: str
    byte_len: int

    def __post_init__(self) -> None:
        if self.byte_len != meter_message(self.text):
            raise ValueError(
                f"byte_len {self.byte_len} does not match text ({meter_message(self.text)} bytes)"
            )


def make_response(client: int, prompt_id: str, text: str) -> ResponseRecord:
    return ResponseRecord(client=client, prompt_id=prompt_id, text=text, byte_len=meter_message(text))


@dataclass(frozen=True)
class PromptConsensus:
    """Serializable per-prompt consensus outcome with real client ids.

    ``clients`` lists the clients whose responses entered clustering
    (those whose text could be embedded); ``labels`` is parallel to it.
    """

    prompt_id: str
    clients: tuple[int, ...]
    labels: tuple[int, ...]
    members: tuple[int, ...]
    representative: int
    pseudo_label: str
    fallback_all_outliers: bool


@dataclass(frozen=True)
class PromptError:
    """Why a prompt or a single response dropped out of a round."""

    prompt_id: str
    client: int | None
    reason: str


@dataclass(frozen=True)
class RoundTranscript:
    """Everything one round produced, in canonical order.

    responses are sorted by (client, prompt_id), consensus entries and
    broadcast pairs by prompt_id, errors by (prompt_id, client).
    """

    round_index: int
    responses: tuple[ResponseRecord, ...]
    consensus: tuple[PromptConsensus, ...]
    broadcast: tuple[tuple[str, str], ...]
    uploaded_bytes: int
    downloaded_bytes: int
    errors: tuple[PromptError, ...]


@dataclass(frozen=True)
class SessionParams:
    """Knobs for a whole session.

    retrain_private_every_round: when False, the private-only training
    pass before generation runs only in round 1 (later rounds already
    absorbed the private data during the joint pass of the previous
    round).  workers sets the thread pool size; results do not depend
    on it.  dp_round_budget, when set, charges every client that
    (epsilon, delta) per round on its privacy ledger.
    """

    encoder: EncoderConfig = EncoderConfig()
    cluster: ClusterParams = ClusterParams()
    strategy: SelectionStrategy = SelectionStrategy()
    weights: TrainingWeights = TrainingWeights()
    max_tokens: int = 64
    retrain_private_every_round: bool = True
    workers: int = 1
    dp_round_budget: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class SessionReport:
    """Ordered transcripts plus cumulative byte totals and DP ledgers."""

    transcripts: tuple[RoundTranscript, ...]
    total_uploaded_bytes: int
    total_downloaded_bytes: int
    ledgers: tuple[PrivacyLedger, ...] | None


def _map_maybe_parallel(fn: Callable, items: Sequence, workers: int) -> list:
    """Apply ``fn`` to items, preserving input order in the result."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _consensus_phase(
    prompt: Prompt,
    records: Sequence[ResponseRecord],
    params: SessionParams,
) -> tuple[PromptConsensus | None, list[PromptError]]:
    """Embed one prompt's responses and run consensus on the usable ones."""
    errors: list[PromptError] = []
    usable: list[ResponseRecord] = []
    embeddings = []
    for record in records:
        try:
            embeddings.append(normalize(encode(record.text, params.encoder)))
            usable.append(record)
        except ZeroVectorError:
            errors.append(
                PromptError(prompt_id=prompt.prompt_id, client=record.client, reason="zero_embedding")
            )
    if not usable:
        errors.append(
            PromptError(prompt_id=prompt.prompt_id, client=None, reason="no_embeddable_responses")
        )
        return None, errors
    try:
        result = consensus_for_prompt(usable, embeddings, params.cluster, params.strategy)
    except ZeroSumError as exc:
        # Only reachable through non-CENTROID paths on degenerate
        # geometry; recorded like any other per-prompt failure.
        errors.append(PromptError(prompt_id=prompt.prompt_id, client=None, reason=str(exc)))
        return None, errors
    outcome = PromptConsensus(
        prompt_id=prompt.prompt_id,
        clients=tuple(r.client for r in usable),
        labels=result.clustering.labels,
        members=result.consensus_members,
        representative=result.representative,
        pseudo_label=result.pseudo_label,
        fallback_all_outliers=result.fallback_all_outliers,
    )
    return outcome, errors


def run_round(
    clients: Sequence[Client],
    prompts: PublicPromptSet,
    params: SessionParams,
    round_index: int,
    private_datasets: Sequence[PrivateDataset] | None = None,
) -> RoundTranscript:
    """Execute one full round and return its transcript.

    Rounds are 1-based, matching scripted-client tables.  The private
    training pass before generation is skipped when
    retrain_private_every_round is False and round_index > 1.
    """
    if round_index < 1:
        raise ConfigError(f"round_index must be >= 1, got {round_index}")
    if len(clients) == 0:
        raise ConfigError("at least one client is required")
    if len(prompts) == 0:
        raise ConfigError("prompt set must be non-empty")
    if private_datasets is None:
        private_datasets = [PrivateDataset.empty(i) for i in range(len(clients))]
    if len(private_datasets) != len(clients):
        raise ConfigError(
            f"{len(private_datasets)} private datasets for {len(clients)} clients"
        )

    do_private_pass = params.retrain_private_every_round or round_index == 1

    def client_phase(index: int) -> list[ResponseRecord]:
        client = clients[index]
        if do_private_pass:
            client.train(private_datasets[index], [], params.weights)
        records = []
        for prompt in prompts.prompts:
            text = client.generate(prompt.prompt_id, prompt.text, round_index, params.max_tokens)
            records.append(make_response(index, prompt.prompt_id, text))
        return records

    per_client = _map_maybe_parallel(client_phase, range(len(clients)), params.workers)
    responses = sorted(
        (rec for recs in per_client for rec in recs), key=lambda r: (r.client, r.prompt_id)
    )
    uploaded = sum(r.byte_len for r in responses)

    by_prompt = {p.prompt_id: [] for p in prompts.prompts}
    for rec in responses:
        by_prompt[rec.prompt_id].append(rec)

    outcomes = _map_maybe_parallel(
        lambda prompt: _consensus_phase(prompt, by_prompt[prompt.prompt_id], params),
        prompts.prompts,
        params.workers,
    )
    consensus_entries: list[PromptConsensus] = []
    errors: list[PromptError] = []
    for outcome, errs in outcomes:
        errors.extend(errs)
        if outcome is not None:
            consensus_entries.append(outcome)
    consensus_entries.sort(key=lambda c: c.prompt_id)
    errors.sort(key=lambda e: (e.prompt_id, -1 if e.client is None else e.client))

    broadcast = tuple((c.prompt_id, c.pseudo_label) for c in consensus_entries)
    downloaded = len(clients) * sum(meter_message(label) for _, label in broadcast)

    prompt_text = {p.prompt_id: p.text for p in prompts.prompts}
    pseudo_pairs = [(prompt_text[pid], label) for pid, label in broadcast]

    def train_phase(index: int) -> None:
        clients[index].train(private_datasets[index], pseudo_pairs, params.weights)

    _map_maybe_parallel(train_phase, range(len(clients)), params.workers)

    return RoundTranscript(
        round_index=round_index,
        responses=tuple(responses),
        consensus=tuple(consensus_entries),
        broadcast=broadcast,
        uploaded_bytes=uploaded,
        downloaded_bytes=downloaded,
        errors=tuple(errors),
    )


def run_session(
    clients: Sequence[Client],
    prompts: PublicPromptSet,
    num_rounds: int,
    params: SessionParams,
    private_datasets: Sequence[PrivateDataset] | None = None,
) -> SessionReport:
    """Run ``num_rounds`` rounds and accumulate byte totals and ledgers."""
    if num_rounds < 1:
        raise ConfigError(f"num_rounds must be >= 1, got {num_rounds}")
    if len(clients) == 0:
        raise ConfigError("at least one client is required")
    if len(prompts) == 0:
        raise ConfigError("prompt set must be non-empty")

    ledgers: list[PrivacyLedger] | None = None
    if params.dp_round_budget is not None:
        ledgers = [PrivacyLedger(client=i) for i in range(len(clients))]

    transcripts: list[RoundTranscript] = []
    for round_index in range(1, num_rounds + 1):
        transcripts.append(run_round(clients, prompts, params, round_index, private_datasets))
        if ledgers is not None:
            eps, delta = params.dp_round_budget
            budget = RoundBudget(round_index=round_index, epsilon=eps, delta=delta)
            ledgers = [record_round(ledger, budget) for ledger in ledgers]

    return SessionReport(
        transcripts=tuple(transcripts),
        total_uploaded_bytes=sum(t.uploaded_bytes for t in transcripts),
        total_downloaded_bytes=sum(t.downloaded_bytes for t in transcripts),
        ledgers=tuple(ledgers) if ledgers is not None else None,
    )


def transcript_to_dict(transcript: RoundTranscript) -> dict:
    """JSON-ready view of a round transcript, already canonically ordered."""
    return {
        "round": transcript.round_index,
        "responses": [
            {
                "client": r.client,
                "prompt_id": r.prompt_id,
                "text": r.text,
                "byte_len": r.byte_len,
            }
            for r in transcript.responses
        ],
        "consensus": [
            {
                "prompt_id": c.prompt_id,
                "clients": list(c.clients),
                "labels": list(c.labels),
                "members": list(c.members),
                "representative": c.representative,
                "pseudo_label": c.pseudo_label,
                "fallback_all_outliers": c.fallback_all_outliers,
            }
            for c in transcript.consensus
        ],
        "broadcast": [
            {"prompt_id": pid, "pseudo_label": label} for pid, label in transcript.broadcast
        ],
        "uploaded_bytes": transcript.uploaded_bytes,
        "downloaded_bytes": transcript.downloaded_bytes,
        "errors": [
            {"prompt_id": e.prompt_id, "client": e.client, "reason": e.reason}
            for e in transcript.errors
        ],
    }


def report_to_dict(report: SessionReport) -> dict:
    """JSON-ready session summary (round summaries, not full transcripts)."""
    out = {
        "rounds": len(report.transcripts),
        "total_uploaded_bytes": report.total_uploaded_bytes,
        "total_downloaded_bytes": report.total_downloaded_bytes,
        "round_summaries": [
            {
                "round": t.round_index,
                "uploaded_bytes": t.uploaded_bytes,
                "downloaded_bytes": t.downloaded_bytes,
                "broadcast_prompts": len(t.broadcast),
                "errors": len(t.errors),
            }
            for t in report.transcripts
        ],
    }
    if report.ledgers is not None:
        ledger_rows = []
        for ledger in report.ledgers:
            eps, delta = total_budget(ledger)
            ledger_rows.append(
                {"client": ledger.client, "epsilon_total": eps, "delta_total": delta}
            )
        out["privacy"] = ledger_rows
    return out
