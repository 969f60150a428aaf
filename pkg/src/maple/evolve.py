"""In-domain seq2seq training with per-epoch mutation snapshots.

Two small encoder-decoder models are fine-tuned on the unlabeled pool, one
per direction (claim-to-evidence and evidence-to-claim). After every epoch
(and, by default, once before any update) greedy generation runs over every
instance and the output is recorded as that instance's mutation for the
checkpoint. Joining mutations back to their claim/evidence texts yields the
triples that downstream scoring consumes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import torch
import torch.nn as nn

from .corpus import ClaimEvidencePair
from .errors import BackendError, ConfigurationError, DataError
from .metrics import resolve_model_path

log = logging.getLogger(__name__)

C2E = "c2e"
E2C = "e2c"
DIRECTIONS = (C2E, E2C)

ProgressSink = Callable[[dict], None]


@dataclass
class EvolveConfig:
    epochs: int = 20
    include_epoch_zero: bool = True
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_length: int = 512
    adapter: str = "lora"  # lora | sft
    lora_dropout: float = 0.1
    lora_alpha: float = 32.0
    lora_rank: int = 8
    prompt: str = "Summarize:"
    base_model_id: str = "t5-small"
    max_new_tokens: int | None = None
    train_seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not 0 <= self.lora_dropout < 1:
            raise ConfigurationError("lora_dropout must be in [0, 1)")
        if self.adapter not in ("lora", "sft"):
            raise ConfigurationError(f"unknown adapter {self.adapter!r}")
        if self.max_new_tokens is not None and self.max_new_tokens > self.max_length:
            raise ConfigurationError("max_new_tokens must be <= max_length")

    @property
    def checkpoint_epochs(self) -> list[int]:
        first = 0 if self.include_epoch_zero else 1
        return list(range(first, self.epochs + 1))

    @property
    def num_checkpoints(self) -> int:
        return len(self.checkpoint_epochs)


def config_hash(cfg: EvolveConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Mutation:
    instance_id: str
    direction: str
    epoch: int
    text: str  # may be empty: degenerate generations are recorded, not dropped


@dataclass(frozen=True)
class Triple:
    instance_id: str
    direction: str
    epoch: int
    claim: str
    evidence: str
    mutation: str


@dataclass
class TripleSet:
    triples: list[Triple]
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# LoRA


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable low-rank residual."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float, dropout: float):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.lora_a = nn.Linear(base.in_features, rank, bias=False)
        self.lora_b = nn.Linear(rank, base.out_features, bias=False)
        nn.init.kaiming_uniform_(self.lora_a.weight, a=5**0.5)
        nn.init.zeros_(self.lora_b.weight)  # adapters start as identity
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.lora_b(self.lora_a(self.dropout(x))) * self.scaling


_LORA_TARGETS = ("q", "v", "q_proj", "v_proj")  # attention query/value projections


def apply_lora(
    model: nn.Module, rank: int = 8, alpha: float = 32.0, dropout: float = 0.1
) -> int:
    """Freeze the model and wrap attention q/v projections with adapters."""
    for p in model.parameters():
        p.requires_grad_(False)
    wrapped = 0
    for module in list(model.modules()):
        for child_name, child in list(module.named_children()):
            if child_name in _LORA_TARGETS and isinstance(child, nn.Linear):
                setattr(module, child_name, LoRALinear(child, rank, alpha, dropout))
                wrapped += 1
    if wrapped == 0:
        raise BackendError("no attention query/value projections found to adapt")
    return wrapped


def parameter_counts(model: nn.Module) -> tuple[int, int]:
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    total = sum(p.numel() for p in model.parameters())
    return trainable, total


# ---------------------------------------------------------------------------
# Backend


@dataclass
class Seq2SeqBackend:
    tokenizer: Any
    model: Any


ModelFactory = Callable[[], Seq2SeqBackend]


def load_backend(cfg: EvolveConfig) -> Seq2SeqBackend:
    from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

    path = resolve_model_path(cfg.base_model_id)
    try:
        tokenizer = AutoTokenizer.from_pretrained(path)
        model = AutoModelForSeq2SeqLM.from_pretrained(path)
    except Exception as exc:
        raise BackendError(f"cannot load base model {cfg.base_model_id!r}: {exc}") from exc
    return Seq2SeqBackend(tokenizer=tokenizer, model=model)


def prepare_model(backend: Seq2SeqBackend, cfg: EvolveConfig) -> None:
    """Attach adapters (or unfreeze everything for sft) and sanity-check counts."""
    model = backend.model
    if cfg.adapter == "lora":
        apply_lora(model, rank=cfg.lora_rank, alpha=cfg.lora_alpha, dropout=cfg.lora_dropout)
        trainable, total = parameter_counts(model)
        if trainable / total >= 0.01:
            log.warning(
                "LoRA trainable fraction %.3f%% >= 1%% (%d/%d); expected well below "
                "1%% for the default base model",
                100 * trainable / total, trainable, total,
            )
    else:
        for p in model.parameters():
            p.requires_grad_(True)


# ---------------------------------------------------------------------------
# Mutation store


class MutationStore:
    """Append-only JSONL of mutations plus a provenance header file.

    Records from completed epochs survive aborts; resumed runs read them back
    instead of regenerating.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.provenance_path = self.path.with_name(self.path.stem + ".provenance.json")

    def write_provenance(self, provenance: dict) -> None:
        self.provenance_path.parent.mkdir(parents=True, exist_ok=True)
        existing = self.read_provenance()
        if existing is not None and existing != provenance:
            raise DataError(
                f"mutation store {self.path} was written under a different config; "
                "remove it or use a fresh output directory"
            )
        with open(self.provenance_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(provenance, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def read_provenance(self) -> dict | None:
        if not self.provenance_path.exists():
            return None
        with open(self.provenance_path, encoding="utf-8") as fh:
            return json.load(fh)

    def append(self, mutations: Iterable[Mutation]) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            for m in mutations:
                fh.write(
                    json.dumps(
                        {
                            "instance_id": m.instance_id,
                            "direction": m.direction,
                            "epoch": m.epoch,
                            "text": m.text,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
            fh.flush()

    def read(self, direction: str | None = None) -> list[Mutation]:
        if not self.path.exists():
            return []
        out: list[Mutation] = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if direction is not None and rec["direction"] != direction:
                    continue
                out.append(
                    Mutation(
                        instance_id=rec["instance_id"],
                        direction=rec["direction"],
                        epoch=rec["epoch"],
                        text=rec["text"],
                    )
                )
        return out

    def completed_epochs(self, direction: str, expected_count: int) -> set[int]:
        """Epochs with a full complement of records for the direction."""
        counts: dict[int, int] = {}
        for m in self.read(direction):
            counts[m.epoch] = counts.get(m.epoch, 0) + 1
        return {e for e, c in counts.items() if c == expected_count}

    def prune(self, direction: str, keep_epochs: set[int]) -> int:
        """Drop this direction's records outside keep_epochs (stale partials
        from an interrupted run); other directions are untouched."""
        if not self.path.exists():
            return 0
        kept: list[str] = []
        removed = 0
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec["direction"] == direction and rec["epoch"] not in keep_epochs:
                    removed += 1
                else:
                    kept.append(line)
        if removed:
            tmp = self.path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                fh.writelines(kept)
            tmp.replace(self.path)
        return removed


# ---------------------------------------------------------------------------
# Training


def _sources_and_targets(
    pairs: Sequence[ClaimEvidencePair], direction: str, prompt: str
) -> tuple[list[str], list[str]]:
    prefix = prompt + " " if prompt else ""
    if direction == C2E:
        return [prefix + p.claim for p in pairs], [p.evidence for p in pairs]
    if direction == E2C:
        return [prefix + p.evidence for p in pairs], [p.claim for p in pairs]
    raise ConfigurationError(f"unknown direction {direction!r}")


def _encode(tokenizer, texts: list[str], max_length: int) -> tuple[torch.Tensor, torch.Tensor, int]:
    """Tokenize with truncation; also report how many texts got truncated."""
    lengths = [len(ids) for ids in tokenizer(texts, add_special_tokens=True)["input_ids"]]
    truncated = sum(1 for l in lengths if l > max_length)
    enc = tokenizer(
        texts, padding=True, truncation=True, max_length=max_length, return_tensors="pt"
    )
    return enc["input_ids"], enc["attention_mask"], truncated


@torch.inference_mode()
def _generate_all(
    backend: Seq2SeqBackend,
    sources: list[str],
    cfg: EvolveConfig,
) -> list[str]:
    model = backend.model
    tokenizer = backend.tokenizer
    was_training = model.training
    model.eval()
    max_new = cfg.max_new_tokens if cfg.max_new_tokens is not None else cfg.max_length
    outputs: list[str] = []
    for start in range(0, len(sources), cfg.batch_size):
        batch = sources[start : start + cfg.batch_size]
        enc = tokenizer(
            batch, padding=True, truncation=True, max_length=cfg.max_length,
            return_tensors="pt",
        )
        generated = model.generate(
            input_ids=enc["input_ids"],
            attention_mask=enc["attention_mask"],
            max_new_tokens=max_new,
            do_sample=False,
            num_beams=1,
        )
        outputs.extend(tokenizer.batch_decode(generated, skip_special_tokens=True))
    if was_training:
        model.train()
    return outputs


def _checkpoint_path(checkpoint_dir: Path, direction: str) -> Path:
    return checkpoint_dir / f"trainer_state_{direction}.pt"


def train_direction(
    pairs: Sequence[ClaimEvidencePair],
    direction: str,
    cfg: EvolveConfig,
    progress_sink: ProgressSink | None = None,
    backend: Seq2SeqBackend | None = None,
    eval_pairs: Sequence[ClaimEvidencePair] | None = None,
    store: MutationStore | None = None,
    checkpoint_dir: str | Path | None = None,
) -> list[Mutation]:
    """Fine-tune one direction, snapshotting mutations at every checkpoint.

    pairs is the training pool; eval_pairs (default: pairs) is the set
    generation runs over at each checkpoint. Returns one Mutation per
    (eval instance, checkpoint epoch).
    """
    if not pairs:
        raise DataError("training pool is empty")
    if direction not in DIRECTIONS:
        raise ConfigurationError(f"unknown direction {direction!r}")
    eval_pairs = list(eval_pairs) if eval_pairs is not None else list(pairs)

    sink = progress_sink or (lambda event: None)
    torch.manual_seed(cfg.train_seed)
    shuffle_rng = random.Random(cfg.train_seed * 2 + DIRECTIONS.index(direction))

    if backend is None:
        backend = load_backend(cfg)
        prepare_model(backend, cfg)
    model = backend.model
    tokenizer = backend.tokenizer

    train_sources, train_targets = _sources_and_targets(pairs, direction, cfg.prompt)
    eval_sources, _ = _sources_and_targets(eval_pairs, direction, cfg.prompt)

    src_ids, src_mask, truncated = _encode(tokenizer, train_sources, cfg.max_length)
    tgt_ids, _, tgt_truncated = _encode(tokenizer, train_targets, cfg.max_length)
    labels = tgt_ids.clone()
    labels[labels == tokenizer.pad_token_id] = -100
    if truncated or tgt_truncated:
        log.info(
            "%s: truncated %d sources and %d targets to max_length=%d",
            direction, truncated, tgt_truncated, cfg.max_length,
        )
    sink({
        "stage": "tokenize", "direction": direction,
        "truncated_sources": truncated, "truncated_targets": tgt_truncated,
    })

    optimizer = torch.optim.AdamW(
        [p for p in model.parameters() if p.requires_grad], lr=cfg.learning_rate
    )

    start_epoch = 0
    done_epochs: set[int] = set()
    ckpt_path = None
    resumed = False
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        ckpt_path = _checkpoint_path(Path(checkpoint_dir), direction)
        if ckpt_path.exists() and store is not None:
            state = torch.load(ckpt_path, weights_only=False)
            if state.get("config_hash") == config_hash(cfg):
                model.load_state_dict(state["model_state"], strict=False)
                optimizer.load_state_dict(state["optimizer_state"])
                torch.set_rng_state(state["torch_rng"])
                shuffle_rng.setstate(state["shuffle_rng"])
                start_epoch = state["epoch"]
                resumed = True
                log.info("%s: resuming after epoch %d", direction, start_epoch)
            else:
                log.warning("%s: checkpoint config mismatch; starting fresh", direction)

    if store is not None:
        # trust only fully-written epochs the checkpoint actually covers
        # (epoch 0 precedes any training and is reusable without one)
        trusted = set(range(0 if cfg.include_epoch_zero else 1, start_epoch + 1))
        done_epochs = store.completed_epochs(direction, len(eval_pairs)) & trusted
        if not resumed:
            done_epochs &= {0}
        if resumed and trusted - done_epochs:
            raise DataError(
                f"{direction}: mutation store lacks complete records for epochs "
                f"{sorted(trusted - done_epochs)} below the checkpoint; the store "
                "was modified externally, cannot resume"
            )
        pruned = store.prune(direction, done_epochs)
        if pruned:
            log.info("%s: dropped %d stale mutation records", direction, pruned)

    mutations: list[Mutation] = []
    if store is not None and done_epochs:
        mutations = [m for m in store.read(direction) if m.epoch in done_epochs]

    def snapshot(epoch: int) -> None:
        if epoch in done_epochs:
            return
        t0 = time.monotonic()
        texts = _generate_all(backend, eval_sources, cfg)
        batch = [
            Mutation(instance_id=p.id, direction=direction, epoch=epoch, text=t)
            for p, t in zip(eval_pairs, texts)
        ]
        mutations.extend(batch)
        if store is not None:
            store.append(batch)
        sink({
            "stage": "snapshot", "direction": direction, "epoch": epoch,
            "seconds": time.monotonic() - t0,
        })

    try:
        if cfg.include_epoch_zero and start_epoch == 0:
            snapshot(0)

        n = len(pairs)
        indices = list(range(n))
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            t0 = time.monotonic()
            model.train()
            shuffle_rng.shuffle(indices)
            losses = []
            for start in range(0, n, cfg.batch_size):
                batch_idx = torch.tensor(indices[start : start + cfg.batch_size])
                optimizer.zero_grad()
                out = model(
                    input_ids=src_ids[batch_idx],
                    attention_mask=src_mask[batch_idx],
                    labels=labels[batch_idx],
                )
                out.loss.backward()
                optimizer.step()
                losses.append(float(out.loss.detach()))
            mean_loss = sum(losses) / len(losses)
            sink({
                "stage": "train_epoch", "direction": direction, "epoch": epoch,
                "loss": mean_loss, "seconds": time.monotonic() - t0,
            })
            snapshot(epoch)
            if ckpt_path is not None:
                tmp = ckpt_path.with_suffix(".tmp")
                torch.save(
                    {
                        "epoch": epoch,
                        "config_hash": config_hash(cfg),
                        "model_state": {
                            k: v for k, v in model.state_dict().items()
                            if cfg.adapter == "sft" or "lora_" in k
                        },
                        "optimizer_state": optimizer.state_dict(),
                        "torch_rng": torch.get_rng_state(),
                        "shuffle_rng": shuffle_rng.getstate(),
                    },
                    tmp,
                )
                tmp.replace(ckpt_path)
    except (DataError, ConfigurationError):
        raise
    except Exception as exc:
        raise BackendError(
            f"{direction} training aborted after epoch snapshots "
            f"{sorted({m.epoch for m in mutations})}: {exc}"
        ) from exc

    eval_index = {p.id: i for i, p in enumerate(eval_pairs)}
    mutations.sort(key=lambda m: (m.epoch, eval_index[m.instance_id]))
    return mutations


def run_evolution(
    pool: Sequence[ClaimEvidencePair],
    cfg: EvolveConfig,
    model_factory: ModelFactory | None = None,
    eval_pairs: Sequence[ClaimEvidencePair] | None = None,
    store: MutationStore | None = None,
    checkpoint_dir: str | Path | None = None,
    progress_sink: ProgressSink | None = None,
) -> TripleSet:
    """Run both directions and join mutations back into scored-ready triples.

    With d inference instances (eval_pairs, defaulting to the pool) the
    result holds exactly 2 * d * num_checkpoints triples.
    """
    eval_pairs = list(eval_pairs) if eval_pairs is not None else list(pool)
    provenance = {
        "config": asdict(cfg),
        "config_hash": config_hash(cfg),
        "pool_size": len(pool),
        "eval_size": len(eval_pairs),
    }
    if store is not None:
        store.write_provenance(provenance)

    all_mutations: list[Mutation] = []
    for direction in DIRECTIONS:
        if model_factory is not None:
            backend = model_factory()
            prepare_model(backend, cfg)
        else:
            backend = None
        all_mutations.extend(
            train_direction(
                pool, direction, cfg,
                progress_sink=progress_sink, backend=backend,
                eval_pairs=eval_pairs, store=store, checkpoint_dir=checkpoint_dir,
            )
        )
    return join_triples(all_mutations, eval_pairs, cfg, provenance)


def join_triples(
    mutations: Sequence[Mutation],
    eval_pairs: Sequence[ClaimEvidencePair],
    cfg: EvolveConfig,
    provenance: dict | None = None,
) -> TripleSet:
    """Attach each mutation to its source pair and check completeness."""
    by_id = {p.id: p for p in eval_pairs}
    triples: list[Triple] = []
    seen: set[tuple[str, str, int]] = set()
    for m in mutations:
        pair = by_id.get(m.instance_id)
        if pair is None:
            raise DataError(f"mutation references unknown instance {m.instance_id!r}")
        key = (m.instance_id, m.direction, m.epoch)
        if key in seen:
            raise DataError(f"duplicate mutation for {key}")
        seen.add(key)
        triples.append(
            Triple(
                instance_id=m.instance_id, direction=m.direction, epoch=m.epoch,
                claim=pair.claim, evidence=pair.evidence, mutation=m.text,
            )
        )
    expected = 2 * len(eval_pairs) * cfg.num_checkpoints
    if len(triples) != expected:
        raise DataError(
            f"triple count {len(triples)} != 2 * {len(eval_pairs)} * "
            f"{cfg.num_checkpoints} = {expected}"
        )
    return TripleSet(triples=triples, provenance=provenance or {})
