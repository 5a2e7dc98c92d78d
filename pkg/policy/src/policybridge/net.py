"""Attention encoder + LSTM/pointer decoder over roadmap observations.

The encoder embeds per-node features (interest mean/std, fused intent, risk
UCB) plus Laplacian positional encodings and applies stacked single-head
self-attention. The decoder conditions the current node's embedding on the
interest threshold and remaining budget, runs an LSTM over the trajectory
tail, and emits pointer-attention logits over the neighbor embeddings;
masked neighbors get probability exactly zero.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

EMBED_DIM = 128
NODE_FEATURES = 4          # interest mean, interest std, fused intent, risk ucb
LAPLACIAN_DIM = 8
ENCODER_LAYERS = 3


def laplacian_positional_encoding(num_nodes: int, edges, dim: int = LAPLACIAN_DIM) -> np.ndarray:
    """Eigenvectors of the normalized graph Laplacian for the `dim` smallest
    nontrivial eigenvalues, sign-fixed so the largest-magnitude entry of each
    vector is positive. Graphs smaller than dim+1 nodes are zero-padded."""
    adj = np.zeros((num_nodes, num_nodes))
    for u, v in edges:
        adj[u, v] = 1.0
        adj[v, u] = 1.0
    deg = adj.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-12)), 0.0)
    lap = np.eye(num_nodes) - inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    eigvals, eigvecs = np.linalg.eigh(lap)
    order = np.argsort(eigvals)
    take = order[1:dim + 1]  # skip the trivial (near-zero) eigenvector
    pe = np.zeros((num_nodes, dim))
    for out_col, col in enumerate(take):
        vec = eigvecs[:, col]
        # permutation-invariant sign fix: orient by the first non-vanishing
        # odd moment (index-based anchors flip under node relabeling when
        # magnitudes tie). Falls back to a max-entry anchor for vectors whose
        # odd moments all vanish (possible on graphs with automorphisms,
        # where the sign is not determined by structure anyway).
        orient = float(np.sum(vec**3))
        if abs(orient) < 1e-12:
            orient = float(np.sum(vec))
        if abs(orient) < 1e-12:
            orient = float(vec[np.argmax(np.abs(vec))])
        if orient < 0:
            vec = -vec
        pe[:, out_col] = vec
    return pe


class AttentionLayer(nn.Module):
    """Single-head scaled dot-product attention.

    q_i = W_Q h_i^q, k_j = W_K h_j^kv, v_j = W_V h_j^kv,
    u_ij = q_i . k_j / sqrt(d), w_ij = softmax_j(u_ij), h'_i = sum_j w_ij v_j
    """

    def __init__(self, dim: int = EMBED_DIM):
        super().__init__()
        self.dim = dim
        self.w_q = nn.Linear(dim, dim, bias=False)
        self.w_k = nn.Linear(dim, dim, bias=False)
        self.w_v = nn.Linear(dim, dim, bias=False)

    def forward(self, h_q: torch.Tensor, h_kv: torch.Tensor) -> torch.Tensor:
        q = self.w_q(h_q)
        k = self.w_k(h_kv)
        v = self.w_v(h_kv)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.dim)
        weights = torch.softmax(scores, dim=-1)
        return weights @ v


class EncoderBlock(nn.Module):
    """Residual self-attention plus a small feed-forward refinement."""

    def __init__(self, dim: int = EMBED_DIM):
        super().__init__()
        self.attention = AttentionLayer(dim)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, h):
        h = self.norm1(h + self.attention(h, h))
        return self.norm2(h + self.ff(h))


class PolicyNet(nn.Module):
    """Encoder-decoder policy over one agent's observation graph."""

    def __init__(self, dim: int = EMBED_DIM, layers: int = ENCODER_LAYERS,
                 pe_dim: int = LAPLACIAN_DIM):
        super().__init__()
        self.dim = dim
        self.pe_dim = pe_dim
        self.input_proj = nn.Linear(NODE_FEATURES + pe_dim, dim)
        self.blocks = nn.ModuleList(EncoderBlock(dim) for _ in range(layers))
        self.state_proj = nn.Linear(dim + 2, dim)  # + interest threshold, budget fraction
        self.lstm = nn.LSTM(dim, dim, batch_first=True)
        self.pointer_q = nn.Linear(dim, dim, bias=False)
        self.pointer_k = nn.Linear(dim, dim, bias=False)
        self.value_head = nn.Sequential(nn.Linear(2 * dim, dim), nn.ReLU(), nn.Linear(dim, 1))

    def encode(self, node_features: torch.Tensor, pe: torch.Tensor) -> torch.Tensor:
        """Context-aware node embeddings, shape (nodes, dim)."""
        h = self.input_proj(torch.cat([node_features, pe], dim=-1))
        for block in self.blocks:
            h = block(h)
        return h

    def decode(self, h_en: torch.Tensor, current: int, neighbors, mask,
               budget_fraction: float, mu_th: float, trajectory_tail):
        """Action log-probabilities over neighbors (masked -> -inf) and value."""
        dtype = h_en.dtype
        state = torch.cat([
            h_en[current],
            torch.tensor([mu_th, budget_fraction], dtype=dtype, device=h_en.device),
        ])
        ctx = self.state_proj(state)
        tail = list(trajectory_tail) or [current]
        seq = torch.cat([h_en[tail], ctx.unsqueeze(0)], dim=0).unsqueeze(0)
        _, (h_last, _) = self.lstm(seq)
        enhanced = h_last.squeeze(0).squeeze(0)

        q = self.pointer_q(enhanced)
        k = self.pointer_k(h_en[list(neighbors)])
        logits = k @ q / math.sqrt(self.dim)
        mask_t = torch.as_tensor(mask, dtype=torch.bool, device=h_en.device)
        logits = torch.where(mask_t, logits, torch.full_like(logits, -torch.inf))
        log_probs = torch.log_softmax(logits, dim=-1)

        value = self.value_head(torch.cat([h_en.mean(dim=0), enhanced])).squeeze(-1)
        return log_probs, value

    def forward(self, obs: dict, pe: torch.Tensor):
        feats = torch.stack([
            torch.as_tensor(obs["interest_mean"], dtype=pe.dtype),
            torch.as_tensor(obs["interest_std"], dtype=pe.dtype),
            torch.as_tensor(obs["intent_field"], dtype=pe.dtype),
            torch.as_tensor(obs["risk_ucb"], dtype=pe.dtype),
        ], dim=-1)
        h_en = self.encode(feats, pe)
        return self.decode(
            h_en, obs["current_node"], obs["neighbors"], obs["mask"],
            obs["budget_fraction"], obs["mu_th"], obs["trajectory_tail"],
        )
