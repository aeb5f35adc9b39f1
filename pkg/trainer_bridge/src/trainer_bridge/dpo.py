"""DPO fine-tuning loop over pref/v1 records.

Sequence log-probabilities are summed over completion tokens only (the
prompt is masked out), the reference log-probabilities come from the same
model with its adapters disabled, and the loss is the standard pairwise
``-log sigmoid(beta * margin)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .lora import adapters_disabled


@dataclass
class EncodedPair:
    chosen_ids: torch.Tensor
    chosen_mask: torch.Tensor  # 1 where the token belongs to the completion
    rejected_ids: torch.Tensor
    rejected_mask: torch.Tensor


def encode_pair(tokenizer, record: dict[str, str], max_len: int) -> EncodedPair:
    def encode(prompt: str, completion: str):
        prompt_ids = tokenizer.encode(prompt)
        completion_ids = tokenizer.encode("\n" + completion) + [tokenizer.eos_token_id]
        ids = (prompt_ids + completion_ids)[:max_len]
        completion_start = min(len(prompt_ids), len(ids))
        mask = torch.zeros(len(ids), dtype=torch.bool)
        mask[completion_start:] = True
        return torch.tensor(ids, dtype=torch.long), mask

    chosen_ids, chosen_mask = encode(record["prompt"], record["chosen"])
    rejected_ids, rejected_mask = encode(record["prompt"], record["rejected"])
    return EncodedPair(chosen_ids, chosen_mask, rejected_ids, rejected_mask)


def _pad_stack(rows: list[torch.Tensor], pad_value: int) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), pad_value, dtype=rows[0].dtype)
    for i, row in enumerate(rows):
        out[i, : len(row)] = row
    return out


def sequence_logprobs(model, ids: torch.Tensor, mask: torch.Tensor, pad_id: int) -> torch.Tensor:
    """Sum of completion-token log-probabilities per sequence."""
    attention = (ids != pad_id).long()
    logits = model(input_ids=ids, attention_mask=attention).logits
    logprobs = F.log_softmax(logits[:, :-1, :], dim=-1)
    targets = ids[:, 1:]
    picked = torch.gather(logprobs, 2, targets.unsqueeze(2)).squeeze(2)
    # The mask marks completion positions in the *input*; shift to targets.
    target_mask = mask[:, 1:].float()
    return (picked * target_mask).sum(dim=1)


def train_dpo(
    model,
    tokenizer,
    records: list[dict[str, str]],
    trainable: list[torch.nn.Parameter],
    beta: float = 0.1,
    lr: float = 1e-06,
    epochs: int = 3,
    batch_size: int = 4,
    max_len: int = 512,
    seed: int = 0,
) -> dict:
    """Run DPO epochs; returns loss/accuracy metrics."""
    if not records:
        raise ValueError("no preference records to train on")
    torch.manual_seed(seed)
    pad_id = tokenizer.pad_token_id
    encoded = [encode_pair(tokenizer, r, max_len) for r in records]
    optimizer = torch.optim.AdamW(trainable, lr=lr)
    model.train()
    losses: list[float] = []
    margin_wins = 0
    margin_total = 0
    generator = torch.Generator().manual_seed(seed)
    for _ in range(epochs):
        order = torch.randperm(len(encoded), generator=generator).tolist()
        for start in range(0, len(encoded), batch_size):
            batch = [encoded[i] for i in order[start : start + batch_size]]
            chosen_ids = _pad_stack([b.chosen_ids for b in batch], pad_id)
            chosen_mask = _pad_stack([b.chosen_mask for b in batch], False)
            rejected_ids = _pad_stack([b.rejected_ids for b in batch], pad_id)
            rejected_mask = _pad_stack([b.rejected_mask for b in batch], False)

            policy_chosen = sequence_logprobs(model, chosen_ids, chosen_mask, pad_id)
            policy_rejected = sequence_logprobs(model, rejected_ids, rejected_mask, pad_id)
            with torch.no_grad(), adapters_disabled(model):
                ref_chosen = sequence_logprobs(model, chosen_ids, chosen_mask, pad_id)
                ref_rejected = sequence_logprobs(model, rejected_ids, rejected_mask, pad_id)

            margin = (policy_chosen - policy_rejected) - (ref_chosen - ref_rejected)
            loss = -F.logsigmoid(beta * margin).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            losses.append(float(loss.detach()))
            margin_wins += int((margin.detach() > 0).sum())
            margin_total += len(batch)
    return {
        "pairs": len(records),
        "steps": len(losses),
        "epochs": epochs,
        "first_loss": losses[0],
        "final_loss": losses[-1],
        "mean_loss": sum(losses) / len(losses),
        "margin_win_rate": margin_wins / max(margin_total, 1),
    }
