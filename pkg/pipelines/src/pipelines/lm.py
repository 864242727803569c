"""Character-level causal decoder with soft-prefix conditioning.

The decoder reads a sequence of prefix embedding slots (produced by a
projection from a text-encoder embedding) followed by BOS and caption
characters, and predicts each next character; causal self-attention lets
every position read the prefix directly. Generation is deterministic beam
search. At production scale the decoder is a frozen pretrained LLM; the
bundled one is a two-layer transformer that gets pretrained on the target
caption distribution before being frozen.
"""

from __future__ import annotations

import torch
from torch import nn

from .textproc import BOS, EOS, PAD, VOCAB_SIZE, decode_chars, encode_chars

DEFAULT_LLM = "meta-llama/Llama-2-7b"


class PrefixLM(nn.Module):
    def __init__(self, vocab_size: int = VOCAB_SIZE, embed_dim: int = 64,
                 n_heads: int = 4, n_layers: int = 2, feedforward_dim: int = 128,
                 max_seq: int = 96, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.embed_dim = embed_dim
        self.max_seq = max_seq
        self.embedding = nn.Embedding(vocab_size, embed_dim, padding_idx=PAD)
        self.positions = nn.Parameter(torch.randn(max_seq, embed_dim) * 0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=embed_dim, nhead=n_heads, dim_feedforward=feedforward_dim,
            dropout=0.0, batch_first=True, norm_first=True)
        self.blocks = nn.TransformerEncoder(layer, num_layers=n_layers,
                                            enable_nested_tensor=False)
        self.head = nn.Linear(embed_dim, vocab_size)

    def _run(self, sequence: torch.Tensor) -> torch.Tensor:
        length = sequence.shape[1]
        if length > self.max_seq:
            raise ValueError(f"sequence length {length} exceeds max_seq {self.max_seq}")
        causal = nn.Transformer.generate_square_subsequent_mask(length)
        hidden = self.blocks(sequence + self.positions[:length], mask=causal)
        return self.head(hidden)

    def forward(self, prefix: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """Logits over the next token at every caption position.

        ``prefix`` is (B, P, embed_dim); ``tokens`` is (B, T) starting with
        BOS. Returns (B, T, vocab): position t predicts tokens[:, t+1] (the
        final position predicts EOS).
        """
        sequence = torch.cat([prefix, self.embedding(tokens)], dim=1)
        return self._run(sequence)[:, prefix.shape[1]:, :]


def caption_batch(captions: list[str], max_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    """(BOS + chars) inputs and (chars + EOS) targets, padded with PAD."""
    encoded = [encode_chars(c, max_len) for c in captions]
    width = max(len(e) for e in encoded) + 1
    tokens = torch.full((len(encoded), width), PAD, dtype=torch.long)
    targets = torch.full((len(encoded), width), PAD, dtype=torch.long)
    for row, ids in enumerate(encoded):
        tokens[row, 0] = BOS
        tokens[row, 1:1 + len(ids)] = torch.tensor(ids)
        targets[row, :len(ids)] = torch.tensor(ids)
        targets[row, len(ids)] = EOS
    return tokens, targets


def reconstruction_loss(lm: PrefixLM, prefix: torch.Tensor,
                        captions: list[str], max_len: int = 64) -> torch.Tensor:
    """Token-wise cross-entropy of reconstructing the captions from the prefix."""
    tokens, targets = caption_batch(captions, max_len)
    logits = lm(prefix, tokens)
    return nn.functional.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=PAD)


@torch.no_grad()
def beam_search(lm: PrefixLM, prefix: torch.Tensor, beams: int = 5,
                max_len: int = 64) -> list[str]:
    """Deterministic beam decode conditioned on one prefix (1, P, E).

    Returns exactly ``beams`` texts ordered by total log-probability.
    """
    lm.eval()
    live: list[tuple[float, list[int]]] = [(0.0, [BOS])]
    finished: list[tuple[float, list[int]]] = []

    for _ in range(max_len + 1):
        if not live:
            break
        tokens = torch.tensor([ids for _, ids in live])
        expanded = prefix.expand(len(live), -1, -1)
        logits = lm(expanded, tokens)[:, -1, :]
        logprobs = torch.log_softmax(logits, dim=-1)
        top = torch.topk(logprobs, beams, dim=-1)

        candidates: list[tuple[float, list[int]]] = []
        for row, (score, ids) in enumerate(live):
            for col in range(beams):
                token = int(top.indices[row, col])
                candidates.append((score + float(top.values[row, col]), ids + [token]))
        candidates.sort(key=lambda item: (-item[0], item[1]))
        candidates = candidates[:beams]

        live = []
        for score, ids in candidates:
            if ids[-1] == EOS or len(ids) - 1 >= max_len:
                finished.append((score, ids))
            else:
                live.append((score, ids))

    finished.extend(live)
    finished.sort(key=lambda item: (-item[0], item[1]))
    texts = [decode_chars(ids) for _, ids in finished[:beams]]
    while len(texts) < beams:
        texts.append(texts[-1] if texts else "")
    return texts


def pretrain_lm_with_prefixes(lm: PrefixLM, encoder, reference_projection: nn.Module,
                              captions: list[str], *, epochs: int = 16,
                              batch_size: int = 32, learning_rate: float = 3e-3,
                              max_len: int = 64, seed: int = 0) -> list[float]:
    """Teach a decoder to exploit soft prefixes before it gets frozen.

    The reference projection stays fixed, so the decoder learns to read
    prefixes living on that projection's output manifold. Returns the
    per-step losses.
    """
    torch.manual_seed(seed)
    optimizer = torch.optim.AdamW(lm.parameters(), lr=learning_rate)
    with torch.no_grad():
        embeddings = encoder(captions)
        prefixes = reference_projection(embeddings)
    losses: list[float] = []
    lm.train()
    for _ in range(epochs):
        for start in range(0, len(captions), batch_size):
            batch = captions[start:start + batch_size]
            prefix = prefixes[start:start + batch_size]
            loss = reconstruction_loss(lm, prefix, batch, max_len)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
    lm.eval()
    return losses
