"""Build a small causal LM entirely offline.

A byte-level tokenizer (every UTF-8 byte is one token, so any text encodes)
plus a GPT-2 architecture sized well under 100M parameters, saved in
standard ``transformers`` format so the trainer can ``from_pretrained`` it
like any hub model.
"""

from __future__ import annotations

from pathlib import Path

from tokenizers import Tokenizer, decoders, models, pre_tokenizers
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

EOS_TOKEN = "<|eos|>"
PAD_TOKEN = "<|pad|>"


def build_byte_tokenizer() -> PreTrainedTokenizerFast:
    alphabet = sorted(pre_tokenizers.ByteLevel.alphabet())
    vocab = {ch: i for i, ch in enumerate(alphabet)}
    vocab[EOS_TOKEN] = len(vocab)
    vocab[PAD_TOKEN] = len(vocab)
    tokenizer = Tokenizer(models.BPE(vocab=vocab, merges=[]))
    tokenizer.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tokenizer.decoder = decoders.ByteLevel()
    return PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        eos_token=EOS_TOKEN,
        pad_token=PAD_TOKEN,
    )


def init_tiny_model(
    out_dir: str | Path,
    n_layer: int = 4,
    n_embd: int = 128,
    n_head: int = 4,
    n_positions: int = 512,
    seed: int = 0,
) -> tuple[Path, int]:
    """Create and save a randomly initialized sub-100M causal LM."""
    import torch

    torch.manual_seed(seed)
    out_dir = Path(out_dir)
    tokenizer = build_byte_tokenizer()
    config = GPT2Config(
        vocab_size=len(tokenizer),
        n_positions=n_positions,
        n_embd=n_embd,
        n_layer=n_layer,
        n_head=n_head,
        bos_token_id=tokenizer.eos_token_id,
        eos_token_id=tokenizer.eos_token_id,
    )
    model = GPT2LMHeadModel(config)
    params = sum(p.numel() for p in model.parameters())
    if params >= 100_000_000:
        raise ValueError(f"model has {params} parameters; expected under 100M")
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    return out_dir, params
