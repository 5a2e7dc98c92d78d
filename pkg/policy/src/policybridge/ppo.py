"""PPO trainer for the bridge policy.

Rollouts stream from the episode engine over the bridge; transitions are
re-evaluated under the current parameters during the clipped-surrogate
epochs. Defaults follow the reference training recipe (Adam 1e-4 decayed by
0.96 every 32 optimizer steps, 256-transition batches, 8 update epochs); the
desk-scale tests override the learning rate, which the recipe leaves to the
deployment scale.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .client import BridgeEnv
from .net import PolicyNet


@dataclass
class PpoConfig:
    learning_rate: float = 1e-4
    lr_decay: float = 0.96
    lr_decay_every: int = 32
    batch_size: int = 256
    update_epochs: int = 8
    minibatch_size: int = 64
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    seed: int = 0


class Transition:
    __slots__ = ("features", "pe", "current", "neighbors", "mask", "tail",
                 "budget_fraction", "mu_th", "action", "old_logp", "value",
                 "reward", "done", "agent")

    def __init__(self, **kw):
        for key, val in kw.items():
            setattr(self, key, val)
        self.reward = 0.0
        self.done = False


def obs_features(msg: dict, dtype) -> torch.Tensor:
    return torch.stack([
        torch.as_tensor(msg["interest_mean"], dtype=dtype),
        torch.as_tensor(msg["interest_std"], dtype=dtype),
        torch.as_tensor(msg["intent_field"], dtype=dtype),
        torch.as_tensor(msg["risk_ucb"], dtype=dtype),
    ], dim=-1)


class PpoTrainer:
    def __init__(self, net: PolicyNet, config: PpoConfig | None = None):
        self.net = net
        self.config = config or PpoConfig()
        self.optimizer = torch.optim.Adam(net.parameters(), lr=self.config.learning_rate)
        self.opt_steps = 0
        self.rng = torch.Generator().manual_seed(self.config.seed)
        self.buffer: list[Transition] = []
        self.episode_returns: list[float] = []
        self.losses: list[dict] = []

    # -- acting --------------------------------------------------------------

    def policy_step(self, msg: dict, pe: torch.Tensor) -> tuple[int, Transition]:
        feats = obs_features(msg, pe.dtype)
        with torch.no_grad():
            h_en = self.net.encode(feats, pe)
            log_probs, value = self.net.decode(
                h_en, msg["current_node"], msg["neighbors"], msg["mask"],
                msg["budget_fraction"], msg["mu_th"], msg["trajectory_tail"])
        probs = log_probs.exp()
        action = int(torch.multinomial(probs, 1, generator=self.rng).item())
        tr = Transition(
            features=feats, pe=pe, current=msg["current_node"],
            neighbors=tuple(msg["neighbors"]), mask=tuple(msg["mask"]),
            tail=tuple(msg["trajectory_tail"]), budget_fraction=msg["budget_fraction"],
            mu_th=msg["mu_th"], action=action,
            old_logp=float(log_probs[action]), value=float(value), agent=msg["agent"],
        )
        return action, tr

    # -- learning ------------------------------------------------------------

    def _advantages(self):
        cfg = self.config
        by_agent: dict[int, list[int]] = {}
        for idx, tr in enumerate(self.buffer):
            by_agent.setdefault(tr.agent, []).append(idx)
        adv = np.zeros(len(self.buffer))
        ret = np.zeros(len(self.buffer))
        for indices in by_agent.values():
            running = 0.0
            next_value = 0.0
            for idx in reversed(indices):
                tr = self.buffer[idx]
                if tr.done:
                    running = 0.0
                    next_value = 0.0
                delta = tr.reward + cfg.gamma * next_value - tr.value
                running = delta + cfg.gamma * cfg.gae_lambda * running
                adv[idx] = running
                ret[idx] = running + tr.value
                next_value = tr.value
        return torch.as_tensor(adv, dtype=torch.float32), torch.as_tensor(ret, dtype=torch.float32)

    def _evaluate(self, tr: Transition):
        h_en = self.net.encode(tr.features, tr.pe)
        log_probs, value = self.net.decode(
            h_en, tr.current, tr.neighbors, tr.mask,
            tr.budget_fraction, tr.mu_th, tr.tail)
        entropy = -(log_probs.exp() * log_probs.nan_to_num(neginf=0.0)).sum()
        return log_probs[tr.action], value, entropy

    def update(self):
        cfg = self.config
        if not self.buffer:
            return
        if cfg.clip_ratio == 0.0:
            # trust region collapsed to a point: no admissible step
            self.buffer.clear()
            return
        adv, ret = self._advantages()
        if len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        n = len(self.buffer)
        for _ in range(cfg.update_epochs):
            order = torch.randperm(n, generator=self.rng).tolist()
            for lo in range(0, n, cfg.minibatch_size):
                batch = order[lo:lo + cfg.minibatch_size]
                pol_loss = torch.zeros(())
                val_loss = torch.zeros(())
                ent = torch.zeros(())
                for idx in batch:
                    tr = self.buffer[idx]
                    logp, value, entropy = self._evaluate(tr)
                    ratio = (logp - tr.old_logp).exp()
                    clipped = torch.clamp(ratio, 1 - cfg.clip_ratio, 1 + cfg.clip_ratio)
                    pol_loss = pol_loss - torch.min(ratio * adv[idx], clipped * adv[idx])
                    val_loss = val_loss + (value - ret[idx]) ** 2
                    ent = ent + entropy
                scale = 1.0 / len(batch)
                loss = scale * (pol_loss + cfg.value_coef * val_loss - cfg.entropy_coef * ent)
                self.optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(self.net.parameters(), cfg.max_grad_norm)
                self._apply_lr()
                self.optimizer.step()
                self.opt_steps += 1
                if not torch.isfinite(loss):
                    raise RuntimeError(f"PPO diverged: non-finite loss at step {self.opt_steps}")
                self.losses.append({"loss": float(loss), "policy": float(scale * pol_loss),
                                    "value": float(scale * val_loss)})
        self.buffer.clear()

    def _apply_lr(self):
        lr = self.config.learning_rate * self.config.lr_decay ** (
            self.opt_steps // self.config.lr_decay_every)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    # -- driving the bridge -----------------------------------------------------

    def train(self, env: BridgeEnv, update: bool = True) -> list[float]:
        """Consume every episode the endpoint offers; returns episode returns."""
        pending: dict[int, Transition] = {}
        episode_transitions: list[Transition] = []
        episode_return = 0.0
        for kind, msg in env.events():
            if kind == "reset":
                pending, episode_transitions, episode_return = {}, [], 0.0
            elif kind == "observation":
                action, tr = self.policy_step(msg, env.pe)
                pending[msg["agent"]] = tr
                env.act(msg["agent"], msg["step"], action)
            elif kind == "reward":
                episode_return += msg["reward"]
                tr = pending.pop(msg["agent"], None)
                if tr is not None:
                    tr.reward = msg["reward"]
                    episode_transitions.append(tr)
                    self.buffer.append(tr)
            elif kind == "done":
                last_by_agent: dict[int, Transition] = {}
                for tr in episode_transitions:
                    last_by_agent[tr.agent] = tr
                for tr in last_by_agent.values():
                    tr.done = True
                self.episode_returns.append(episode_return)
                if update and len(self.buffer) >= self.config.batch_size:
                    self.update()
        return self.episode_returns


def run_random_policy(env: BridgeEnv, seed: int = 0) -> list[float]:
    """Uniform-over-unmasked baseline on the same protocol."""
    rng = np.random.default_rng(seed)
    returns = []
    episode_return = 0.0
    for kind, msg in env.events():
        if kind == "reset":
            episode_return = 0.0
        elif kind == "observation":
            feasible = [i for i, ok in enumerate(msg["mask"]) if ok]
            env.act(msg["agent"], msg["step"], int(rng.choice(feasible)))
        elif kind == "reward":
            episode_return += msg["reward"]
        elif kind == "done":
            returns.append(episode_return)
    return returns


def save_checkpoint(path, net: PolicyNet, config: PpoConfig):
    torch.save({"state_dict": net.state_dict(), "config": asdict(config),
                "dim": net.dim, "pe_dim": net.pe_dim,
                "layers": len(net.blocks)}, path)


def load_checkpoint(path) -> tuple[PolicyNet, PpoConfig]:
    doc = torch.load(path, weights_only=False)
    net = PolicyNet(dim=doc["dim"], layers=doc["layers"], pe_dim=doc["pe_dim"])
    net.load_state_dict(doc["state_dict"])
    return net, PpoConfig(**doc["config"])
