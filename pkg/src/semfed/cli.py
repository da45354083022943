"""Command-line front end.

Subcommands cover the five workflows: ``simulate`` runs a full
multi-round session from a JSON config, ``consensus`` runs the
per-prompt pipeline on a JSONL response dump, ``cost`` evaluates the
communication calculators, ``bound`` evaluates the convergence bound,
and ``privacy`` composes per-round budgets from a CSV.

Reports go to stdout as canonically serialized JSON (sorted keys);
diagnostics go to stderr.  Every report echoes the command, its
effective inputs, the seed in play, and the package version, so a
report is reproducible from its own header.  Exit status is 0 when the
requested computation completed (per-prompt consensus errors inside a
run do not fail the process) and 2 for unusable inputs or config.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .clients import (
    Client,
    MarkovToyClient,
    PrivateDataset,
    TrainingWeights,
    load_private_datasets,
    load_scripted_clients,
)
from .consensus import (
    ClusterParams,
    SelectionRule,
    SelectionStrategy,
    consensus_for_prompt,
)
from .costmodel import (
    PRESETS,
    CostComparison,
    TextRoundCostSpec,
    SubsampleCostSpec,
    comparison_report,
    text_round_bytes,
    subsample_bytes,
)
from .encoder import EncoderConfig, ZeroVectorError, encode, load_embeddings_jsonl, normalize
from .privacy import load_ledgers_csv, total_budget
from .protocol import (
    ConfigError,
    PublicPromptSet,
    SessionParams,
    make_response,
    report_to_dict,
    run_session,
    transcript_to_dict,
)
from .theory import (
    GapParams,
    StationarityParams,
    delta_T,
    stationarity_rhs,
)

__all__ = ["main"]

_STRATEGY_NAMES = {rule.value: rule for rule in SelectionRule}


def _emit(report: dict) -> None:
    sys.stdout.write(json.dumps(report, sort_keys=True, indent=2) + "\n")


def _fail(message: str) -> int:
    sys.stderr.write(f"error: {message}\n")
    return 2


def _report(command: str, inputs: dict, outputs: dict, seed: int | None) -> dict:
    return {
        "command": command,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "version": __version__,
    }


# ---------------------------------------------------------------- simulate


_CONFIG_KEYS = {
    "clients",
    "rounds",
    "prompt_file",
    "prompt_budget",
    "eps",
    "min_pts",
    "strategy",
    "strategy_seed",
    "seed",
    "encoder",
    "weights",
    "max_tokens",
    "workers",
    "retrain_private_every_round",
    "dp",
}


def _parse_encoder(raw: dict | None) -> EncoderConfig:
    raw = dict(raw or {})
    allowed = {"dimension", "ngram", "seed", "lowercase"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown encoder keys: {sorted(unknown)}")
    return EncoderConfig(
        dimension=int(raw.get("dimension", 384)),
        ngram_size=int(raw.get("ngram", 3)),
        seed=int(raw.get("seed", 0)),
        lowercase=bool(raw.get("lowercase", False)),
    )


def _parse_weights(raw: dict | None) -> TrainingWeights:
    raw = dict(raw or {})
    unknown = set(raw) - {"alpha", "beta"}
    if unknown:
        raise ConfigError(f"unknown weights keys: {sorted(unknown)}")
    return TrainingWeights(
        alpha=float(raw.get("alpha", 0.5)), beta=float(raw.get("beta", 0.5))
    )


def _parse_strategy(config: dict, seed: int) -> SelectionStrategy:
    name = config.get("strategy", "centroid")
    if name not in _STRATEGY_NAMES:
        raise ConfigError(
            f"unknown strategy {name!r}; expected one of {sorted(_STRATEGY_NAMES)}"
        )
    return SelectionStrategy(
        rule=_STRATEGY_NAMES[name], seed=int(config.get("strategy_seed", seed))
    )


def _build_clients(
    config: dict, base_dir: Path, seed: int
) -> tuple[list[Client], list[PrivateDataset] | None, dict]:
    """Construct clients (and any private data) from the config."""
    raw = config.get("clients")
    if raw is None:
        raise ConfigError("config must declare clients")
    if isinstance(raw, int):
        raw = {"type": "markov", "count": raw}
    if not isinstance(raw, dict) or "type" not in raw:
        raise ConfigError("clients must be an int or an object with a type field")
    kind = raw["type"]
    if kind == "scripted":
        unknown = set(raw) - {"type", "path"}
        if unknown:
            raise ConfigError(f"unknown scripted-client keys: {sorted(unknown)}")
        if "path" not in raw:
            raise ConfigError("scripted clients need a path")
        path = base_dir / str(raw["path"])
        clients = list(load_scripted_clients(path))
        echo = {"type": "scripted", "path": str(raw["path"]), "count": len(clients)}
        return clients, None, echo
    if kind == "markov":
        unknown = set(raw) - {"type", "count", "order", "private_file"}
        if unknown:
            raise ConfigError(f"unknown markov-client keys: {sorted(unknown)}")
        count = int(raw.get("count", 0))
        if count < 1:
            raise ConfigError(f"markov clients need count >= 1, got {count}")
        order = int(raw.get("order", 1))
        clients = [MarkovToyClient(order=order, seed=seed + i) for i in range(count)]
        private = None
        if "private_file" in raw:
            private = load_private_datasets(base_dir / str(raw["private_file"]), count)
        echo = {"type": "markov", "count": count, "order": order}
        if "private_file" in raw:
            echo["private_file"] = str(raw["private_file"])
        return list(clients), private, echo
    raise ConfigError(f"unknown client type {kind!r}; expected scripted or markov")


def _load_config(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(config) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return config


def cmd_simulate(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    try:
        config = _load_config(config_path)
        base_dir = config_path.parent
        seed = int(args.seed if args.seed is not None else config.get("seed", 0))
        rounds = int(config.get("rounds", 1))
        if "prompt_file" not in config:
            raise ConfigError("config must declare prompt_file")
        budget = int(config.get("prompt_budget", 500))
        if budget < 1:
            raise ConfigError(f"prompt_budget must be >= 1, got {budget}")
        prompts = PublicPromptSet.from_jsonl(base_dir / str(config["prompt_file"]), limit=budget)
        if len(prompts) == 0:
            raise ConfigError("prompt file contains no prompts")
        clients, private, clients_echo = _build_clients(config, base_dir, seed)
        dp = None
        if "dp" in config:
            raw_dp = config["dp"]
            if not isinstance(raw_dp, dict) or set(raw_dp) != {"epsilon", "delta"}:
                raise ConfigError("dp must be an object with exactly epsilon and delta")
            dp = (float(raw_dp["epsilon"]), float(raw_dp["delta"]))
        params = SessionParams(
            encoder=_parse_encoder(config.get("encoder")),
            cluster=ClusterParams(
                eps=float(config.get("eps", 0.3)), min_pts=int(config.get("min_pts", 2))
            ),
            strategy=_parse_strategy(config, seed),
            weights=_parse_weights(config.get("weights")),
            max_tokens=int(config.get("max_tokens", 64)),
            retrain_private_every_round=bool(config.get("retrain_private_every_round", True)),
            workers=int(config.get("workers", 1)),
            dp_round_budget=dp,
        )
        report = run_session(clients, prompts, rounds, params, private)
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        return _fail(str(exc))

    inputs_echo = {
        "config_file": str(config_path),
        "clients": clients_echo,
        "rounds": rounds,
        "prompt_file": str(config["prompt_file"]),
        "prompt_budget": budget,
        "prompts_used": len(prompts),
        "eps": params.cluster.eps,
        "min_pts": params.cluster.min_pts,
        "strategy": params.strategy.rule.value,
        "strategy_seed": params.strategy.seed,
        "encoder": {
            "dimension": params.encoder.dimension,
            "ngram": params.encoder.ngram_size,
            "seed": params.encoder.seed,
            "lowercase": params.encoder.lowercase,
        },
        "weights": {"alpha": params.weights.alpha, "beta": params.weights.beta},
        "max_tokens": params.max_tokens,
        "workers": params.workers,
        "retrain_private_every_round": params.retrain_private_every_round,
        "dp": None if dp is None else {"epsilon": dp[0], "delta": dp[1]},
    }
    session = _report("simulate", inputs_echo, report_to_dict(report), seed)

    if args.output is not None:
        out_dir = Path(args.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        for transcript in report.transcripts:
            path = out_dir / f"round_{transcript.round_index:04d}.json"
            path.write_text(
                json.dumps(transcript_to_dict(transcript), sort_keys=True, indent=2) + "\n",
                encoding="utf-8",
            )
        (out_dir / "session.json").write_text(
            json.dumps(session, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    _emit(session)
    return 0


# ---------------------------------------------------------------- consensus


def _read_response_rows(path: Path) -> dict[str, list[tuple[int, str]]]:
    """Group {prompt_id, client_id, response} JSONL rows by prompt."""
    grouped: dict[str, list[tuple[int, str]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                prompt_id = str(row["prompt_id"])
                client_id = int(row["client_id"])
                response = str(row["response"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(
                    f"{path}:{lineno}: expected prompt_id, client_id, response fields"
                ) from exc
            bucket = grouped.setdefault(prompt_id, [])
            if any(c == client_id for c, _ in bucket):
                raise ValueError(
                    f"{path}:{lineno}: duplicate client {client_id} for prompt {prompt_id!r}"
                )
            bucket.append((client_id, response))
    if not grouped:
        raise ValueError(f"{path}: no response rows found")
    return grouped


def cmd_consensus(args: argparse.Namespace) -> int:
    try:
        grouped = _read_response_rows(Path(args.input))
        encoder_config = EncoderConfig(
            dimension=args.dimension, ngram_size=args.ngram, seed=args.encoder_seed
        )
        params = ClusterParams(eps=args.eps, min_pts=args.min_pts)
        strategy = SelectionStrategy(
            rule=_STRATEGY_NAMES[args.strategy],
            seed=args.seed if args.seed is not None else 0,
        )
        external = None
        if args.embeddings is not None:
            external = load_embeddings_jsonl(args.embeddings)
    except (ValueError, OSError) as exc:
        return _fail(str(exc))

    results = []
    for prompt_id in sorted(grouped):
        rows = sorted(grouped[prompt_id])
        records = [make_response(client, prompt_id, text) for client, text in rows]
        embeddings = []
        skipped = []
        kept = []
        try:
            for record in records:
                if external is not None:
                    key = f"{record.prompt_id}/{record.client}"
                    if key not in external:
                        return _fail(f"missing external embedding for {key!r}")
                    embeddings.append(normalize(external[key]))
                    kept.append(record)
                else:
                    try:
                        embeddings.append(normalize(encode(record.text, encoder_config)))
                        kept.append(record)
                    except ZeroVectorError:
                        skipped.append(record.client)
            if not kept:
                results.append(
                    {
                        "prompt_id": prompt_id,
                        "error": "no_embeddable_responses",
                        "skipped_clients": skipped,
                    }
                )
                continue
            result = consensus_for_prompt(kept, embeddings, params, strategy)
        except ValueError as exc:
            return _fail(f"prompt {prompt_id!r}: {exc}")
        entry = {
            "prompt_id": prompt_id,
            "clients": [r.client for r in kept],
            "labels": list(result.clustering.labels),
            "members": list(result.consensus_members),
            "representative": result.representative,
            "pseudo_label": result.pseudo_label,
            "fallback_all_outliers": result.fallback_all_outliers,
            "centroid": [float(x) for x in result.centroid],
        }
        if skipped:
            entry["skipped_clients"] = skipped
        results.append(entry)

    inputs_echo = {
        "input": str(args.input),
        "embeddings": None if args.embeddings is None else str(args.embeddings),
        "eps": args.eps,
        "min_pts": args.min_pts,
        "strategy": args.strategy,
        "encoder": {"dimension": args.dimension, "ngram": args.ngram, "seed": args.encoder_seed},
    }
    _emit(_report("consensus", inputs_echo, {"prompts": results}, args.seed))
    return 0


# ---------------------------------------------------------------- cost


def cmd_cost(args: argparse.Namespace) -> int:
    try:
        text_spec = TextRoundCostSpec(
            num_clients=args.clients,
            num_prompts=args.prompts,
            avg_tokens=args.tokens,
            bytes_per_token=args.bytes_per_token,
            include_download=not args.upload_only,
        )
        outputs: dict = {
            "text_round": {
                "total_bytes": text_round_bytes(text_spec),
                "include_download": text_spec.include_download,
            }
        }
        if args.preset is not None:
            preset = PRESETS.get(args.preset)
            if preset is None:
                return _fail(f"unknown preset {args.preset!r}; expected one of {sorted(PRESETS)}")
            comparison = comparison_report(
                preset, text_spec, rank=args.rank, bytes_per_param=args.bytes_per_param
            )
            outputs["comparison"] = _comparison_to_dict(comparison)
        if args.subsample_fraction is not None:
            if args.total_params is None:
                return _fail("--subsample-fraction requires --total-params")
            sub_spec = SubsampleCostSpec(
                num_clients=args.clients,
                fraction=args.subsample_fraction,
                total_params=args.total_params,
                bytes_per_param=args.bytes_per_param,
            )
            outputs["subsample"] = {"total_bytes": subsample_bytes(sub_spec)}
    except ValueError as exc:
        return _fail(str(exc))

    inputs_echo = {
        "clients": args.clients,
        "prompts": args.prompts,
        "tokens": args.tokens,
        "bytes_per_token": args.bytes_per_token,
        "upload_only": args.upload_only,
        "preset": args.preset,
        "rank": args.rank,
        "bytes_per_param": args.bytes_per_param,
        "subsample_fraction": args.subsample_fraction,
        "total_params": args.total_params,
    }
    if args.format == "csv":
        _emit_cost_csv(outputs)
        return 0
    _emit(_report("cost", inputs_echo, outputs, None))
    return 0


def _comparison_to_dict(comparison: CostComparison) -> dict:
    return {
        "preset": comparison.preset,
        "rank": comparison.rank,
        "bytes_per_param": comparison.bytes_per_param,
        "text_bytes": comparison.text_bytes,
        "text_mb": comparison.text_mb,
        "text_mib": comparison.text_mib,
        "adapters": [
            {
                "targets": e.targets,
                "upload_bytes": e.upload_bytes,
                "total_bytes": e.total_bytes,
                "upload_mib": e.upload_mib,
                "total_mib": e.total_mib,
                "ratio_exact": e.ratio_exact,
                "ratio_rounded": e.ratio_rounded,
            }
            for e in comparison.entries
        ],
    }


def _emit_cost_csv(outputs: dict) -> None:
    writer = csv.writer(sys.stdout)
    writer.writerow(["kind", "targets", "bytes"])
    writer.writerow(["text_round", "", outputs["text_round"]["total_bytes"]])
    if "comparison" in outputs:
        for entry in outputs["comparison"]["adapters"]:
            writer.writerow(["lora_upload", entry["targets"], entry["upload_bytes"]])
            writer.writerow(["lora_total", entry["targets"], entry["total_bytes"]])
    if "subsample" in outputs:
        writer.writerow(["subsample", "", outputs["subsample"]["total_bytes"]])


# ---------------------------------------------------------------- bound


def cmd_bound(args: argparse.Namespace) -> int:
    try:
        gap = GapParams(
            grad_bound=args.grad_bound,
            kl_shift=args.kl_shift,
            label_noise=args.label_noise,
            public_batch=args.public_batch,
            param_dim=args.param_dim,
            total_steps=args.steps,
            confidence=args.confidence,
        )
        outputs: dict = {"gap": delta_T(gap)}
        stationarity_given = [
            args.smoothness,
            args.step_size,
            args.noise_var,
            args.heterogeneity,
            args.init_gap,
        ]
        if any(v is not None for v in stationarity_given):
            if any(v is None for v in stationarity_given):
                return _fail(
                    "stationarity bound needs all of --smoothness, --step-size, "
                    "--noise-var, --heterogeneity, --init-gap"
                )
            bound = stationarity_rhs(
                StationarityParams(
                    gap=gap,
                    smoothness=args.smoothness,
                    step_size=args.step_size,
                    noise_var=args.noise_var,
                    heterogeneity=args.heterogeneity,
                    init_gap=args.init_gap,
                )
            )
            outputs["stationarity"] = {
                "descent_term": bound.descent_term,
                "noise_term": bound.noise_term,
                "bias_term": bound.bias_term,
                "total": bound.total,
            }
    except ValueError as exc:
        return _fail(str(exc))

    inputs_echo = {
        "grad_bound": args.grad_bound,
        "kl_shift": args.kl_shift,
        "label_noise": args.label_noise,
        "public_batch": args.public_batch,
        "param_dim": args.param_dim,
        "steps": args.steps,
        "confidence": args.confidence,
        "smoothness": args.smoothness,
        "step_size": args.step_size,
        "noise_var": args.noise_var,
        "heterogeneity": args.heterogeneity,
        "init_gap": args.init_gap,
    }
    _emit(_report("bound", inputs_echo, outputs, None))
    return 0


# ---------------------------------------------------------------- privacy


def cmd_privacy(args: argparse.Namespace) -> int:
    try:
        ledgers = load_ledgers_csv(Path(args.csv))
    except (ValueError, OSError) as exc:
        return _fail(str(exc))
    rows = []
    combined_eps = 0.0
    combined_delta = 0.0
    for ledger in ledgers:
        eps, delta = total_budget(ledger)
        combined_eps += eps
        combined_delta += delta
        rows.append(
            {
                "client": ledger.client,
                "rounds": len(ledger.rounds),
                "epsilon_total": eps,
                "delta_total": delta,
                "delta_vacuous": delta >= 1.0,
            }
        )
    outputs = {
        "clients": rows,
        "combined": {"epsilon_total": combined_eps, "delta_total": combined_delta},
        "semantics": args.semantics,
    }
    _emit(_report("privacy", {"csv": str(args.csv), "semantics": args.semantics}, outputs, None))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semfed",
        description="Federated text-exchange simulator with embedding-consensus "
        "pseudo-labels, plus cost, bound, and privacy calculators",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a multi-round session from a JSON config")
    p_sim.add_argument("--config", required=True, help="JSON session config")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sim.add_argument("--output", default=None, help="directory for per-round transcripts")
    p_sim.set_defaults(func=cmd_simulate)

    p_con = sub.add_parser("consensus", help="run per-prompt consensus on a JSONL dump")
    p_con.add_argument("--input", required=True, help="JSONL rows with prompt_id, client_id, response")
    p_con.add_argument("--eps", type=float, default=0.3)
    p_con.add_argument("--min-pts", type=int, default=2)
    p_con.add_argument("--strategy", choices=sorted(_STRATEGY_NAMES), default="centroid")
    p_con.add_argument("--seed", type=int, default=None, help="seed for the randomized strategy")
    p_con.add_argument("--dimension", type=int, default=384)
    p_con.add_argument("--ngram", type=int, default=3)
    p_con.add_argument("--encoder-seed", type=int, default=0)
    p_con.add_argument(
        "--embeddings",
        default=None,
        help="external embeddings JSONL keyed by response_id = '<prompt_id>/<client_id>'",
    )
    p_con.set_defaults(func=cmd_consensus)

    p_cost = sub.add_parser("cost", help="communication cost calculators")
    p_cost.add_argument("--clients", type=int, default=10)
    p_cost.add_argument("--prompts", type=int, default=1024)
    p_cost.add_argument("--tokens", type=float, default=128.0)
    p_cost.add_argument("--bytes-per-token", type=float, default=2.0)
    p_cost.add_argument("--upload-only", action="store_true")
    p_cost.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p_cost.add_argument("--rank", type=int, default=32)
    p_cost.add_argument("--bytes-per-param", type=float, default=2.0)
    p_cost.add_argument("--subsample-fraction", type=float, default=None)
    p_cost.add_argument("--total-params", type=int, default=None)
    p_cost.add_argument("--format", choices=("json", "csv"), default="json")
    p_cost.set_defaults(func=cmd_cost)

    p_bound = sub.add_parser("bound", help="convergence bound calculators")
    p_bound.add_argument("--grad-bound", type=float, required=True)
    p_bound.add_argument("--kl-shift", type=float, default=0.0)
    p_bound.add_argument("--label-noise", type=float, default=0.0)
    p_bound.add_argument("--public-batch", type=int, default=1)
    p_bound.add_argument("--param-dim", type=int, default=1)
    p_bound.add_argument("--steps", type=int, default=1)
    p_bound.add_argument("--confidence", type=float, default=0.05)
    p_bound.add_argument("--smoothness", type=float, default=None)
    p_bound.add_argument("--step-size", type=float, default=None)
    p_bound.add_argument("--noise-var", type=float, default=None)
    p_bound.add_argument("--heterogeneity", type=float, default=None)
    p_bound.add_argument("--init-gap", type=float, default=None)
    p_bound.set_defaults(func=cmd_bound)

    p_priv = sub.add_parser("privacy", help="compose per-round budgets from CSV")
    p_priv.add_argument("--csv", required=True, help="CSV with client, round, epsilon, delta")
    p_priv.add_argument(
        "--semantics",
        default=None,
        help="free-text note on the neighboring-dataset semantics of the inputs",
    )
    p_priv.set_defaults(func=cmd_privacy)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
