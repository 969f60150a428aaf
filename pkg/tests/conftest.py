"""Shared fixtures: toy claim-evidence pools and a tiny offline seq2seq
backend (word-level tokenizer + randomly initialised T5) so the real training
loop runs in tests without downloading weights."""

from __future__ import annotations

import random

import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.normalizers import Lowercase
from tokenizers.pre_tokenizers import Whitespace
from tokenizers.processors import TemplateProcessing
from transformers import PreTrainedTokenizerFast, T5Config, T5ForConditionalGeneration

from maple.corpus import ClaimEvidencePair, Label
from maple.evolve import EvolveConfig, Seq2SeqBackend

ANIMALS = ["cat", "dog", "bird", "fox", "horse", "mouse"]
PLACES = ["garden", "river", "forest", "house", "field", "barn"]
ACTIONS = ["sleeps", "runs", "sings", "hides", "eats", "jumps"]

FILLER = ["indeed", "every", "day", "never", "near", "in", "the", "a", "summarize"]


def make_toy_pool(n_per_class: int = 4, seed: int = 7, prefix: str = "toy"):
    """Synthetic labeled pairs over a tiny closed vocabulary."""
    rng = random.Random(seed)
    pairs = []
    i = 0
    for label in Label:
        for _ in range(n_per_class):
            animal = rng.choice(ANIMALS)
            place = rng.choice(PLACES)
            action = rng.choice(ACTIONS)
            claim = f"the {animal} {action} in the {place}"
            if label is Label.SUPPORTS:
                evidence = f"indeed the {animal} {action} in the {place} every day"
            elif label is Label.REFUTES:
                evidence = f"the {animal} never {action} in the {place}"
            else:
                other = rng.choice([a for a in ANIMALS if a != animal])
                evidence = f"a {other} {rng.choice(ACTIONS)} near the {rng.choice(PLACES)}"
            pairs.append(
                ClaimEvidencePair(
                    id=f"{prefix}-{i:03d}", claim=claim, evidence=evidence, label=label
                )
            )
            i += 1
    return pairs


def toy_vocabulary() -> list[str]:
    return sorted(set(ANIMALS + PLACES + ACTIONS + FILLER)) + [":"]


def build_tiny_backend(seed: int = 0, extra_tokens: list[str] | None = None) -> Seq2SeqBackend:
    """Word-level tokenizer over the toy vocabulary plus a tiny random T5."""
    vocab = {"<pad>": 0, "</s>": 1, "<unk>": 2}
    for word in toy_vocabulary() + (extra_tokens or []):
        if word not in vocab:
            vocab[word] = len(vocab)
    tok = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    tok.normalizer = Lowercase()
    tok.pre_tokenizer = Whitespace()
    tok.post_processor = TemplateProcessing(
        single="$A </s>", special_tokens=[("</s>", 1)]
    )
    hf_tok = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="<pad>",
        eos_token="</s>",
        unk_token="<unk>",
        model_max_length=512,
    )
    cfg = T5Config(
        vocab_size=len(vocab),
        d_model=32,
        d_kv=8,
        d_ff=64,
        num_layers=2,
        num_heads=4,
        decoder_start_token_id=0,
        pad_token_id=0,
        eos_token_id=1,
    )
    torch.manual_seed(seed)
    model = T5ForConditionalGeneration(cfg)
    model.generation_config.max_length = None  # max_new_tokens passed explicitly
    return Seq2SeqBackend(tokenizer=hf_tok, model=model)


def tiny_evolve_config(**overrides) -> EvolveConfig:
    defaults = dict(
        epochs=2,
        include_epoch_zero=True,
        learning_rate=1e-3,
        batch_size=8,
        max_length=32,
        max_new_tokens=12,
        adapter="lora",
        lora_rank=2,
        lora_alpha=4.0,
        lora_dropout=0.1,
        prompt="summarize:",
        base_model_id="tiny-test-t5",
        train_seed=0,
    )
    defaults.update(overrides)
    return EvolveConfig(**defaults)


def save_tiny_backend(directory, seed: int = 0) -> str:
    """Persist the tiny backend so CLI runs can load it as a local model."""
    backend = build_tiny_backend(seed=seed)
    backend.tokenizer.save_pretrained(str(directory))
    backend.model.save_pretrained(str(directory))
    return str(directory)


@pytest.fixture
def toy_pool():
    return make_toy_pool(n_per_class=4)


@pytest.fixture
def tiny_backend_factory():
    def factory(seed: int = 0):
        return build_tiny_backend(seed=seed)

    return factory
