"""Value-based learning agent: MLP Q-network trained with Adam on squared
TD error, uniform replay, epsilon-greedy exploration, and a softly updated
target network (double-Q action selection by default).

The network and optimizer are implemented directly on numpy arrays so that
training is bit-reproducible given the seed set and checkpoints round-trip
exactly through JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .envcore import EpisodeStats, SyncPlaceEnv

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss or gradient became non-finite; training cannot continue."""


@dataclass
class AgentConfig:
    learning_rate: float = 0.01
    batch_size: int = 256
    gamma: float = 0.4
    epsilon_decay: float = 10.0  # denominator of the exploration schedule
    soft_update_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    episodes: int = 300
    buffer_capacity: int = 40000
    hidden_sizes: tuple = (128, 128)
    use_double_q: bool = True

    def validate(self):
        from .envcore import ConfigError

        if self.learning_rate <= 0:
            raise ConfigError("agent.learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("agent.batch_size must be >= 1")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("agent.gamma must be in [0, 1)")
        if self.epsilon_decay <= 0:
            raise ConfigError("agent.epsilon_decay must be positive")
        if not (0.0 < self.soft_update_rate <= 1.0):
            raise ConfigError("agent.soft_update_rate must be in (0, 1]")
        if self.episodes < 1:
            raise ConfigError("agent.episodes must be >= 1")
        if self.buffer_capacity < self.batch_size:
            raise ConfigError("agent.buffer_capacity must be >= batch_size")
        if not self.hidden_sizes:
            raise ConfigError("agent.hidden_sizes must be nonempty")


class QNetwork:
    """Fully connected ReLU network with a linear output head.

    Weights[l] has shape (fan_in, fan_out); forward accepts a single state
    vector or a batch matrix.
    """

    def __init__(self, layer_sizes, rng=None, init="fan_in"):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layers")
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            if init == "zeros":
                w = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            elif init == "fan_in":
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, (fan_in, fan_out))
                b = rng.uniform(-bound, bound, fan_out)
            else:
                raise ValueError(f"unknown init {init!r}")
            self.weights.append(np.asarray(w, dtype=np.float64))
            self.biases.append(np.asarray(b, dtype=np.float64))

    @classmethod
    def zeros(cls, layer_sizes):
        return cls(layer_sizes, init="zeros")

    def copy(self) -> "QNetwork":
        clone = QNetwork.zeros(self.layer_sizes)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def parameters(self):
        """Flat list of parameter arrays (weights then bias, layer by layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x):
        """Q-values for one encoded state (1D) or a batch (2D)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"state has dimension {h.shape[1]}, expected {self.layer_sizes[0]}"
            )
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if l < last:
                np.maximum(h, 0.0, out=h)
        return h[0] if single else h

    def forward_cached(self, x):
        """Forward pass keeping layer activations for backprop.

        Returns (q, activations) where activations[l] is the input to layer l.
        """
        h = np.asarray(x, dtype=np.float64)
        acts = [h]
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if l < last:
                np.maximum(h, 0.0, out=h)
                acts.append(h)
        return h, acts

    def backward(self, acts, dq):
        """Gradients of a loss wrt every parameter, given d(loss)/d(output).

        Hidden activations are ReLU, so the post-activation values in `acts`
        gate the backward flow directly.
        """
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = dq
        for l in range(len(self.weights) - 1, -1, -1):
            grads_w[l] = acts[l].T @ delta
            grads_b[l] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self.weights[l].T) * (acts[l] > 0.0)
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.append(gw)
            grads.append(gb)
        return grads


class Adam:
    """Adam with bias correction, one moment pair per parameter array.

    Updates run through preallocated scratch buffers; the arithmetic is
    m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g*g, then
    p -= lr * m_hat / (sqrt(v_hat) + eps) with the usual bias correction.
    """

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._s1 = [np.empty_like(p) for p in params]
        self._s2 = [np.empty_like(p) for p in params]

    def step(self, params, grads):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** t
        c2 = 1 - b2 ** t
        for p, g, m, v, s1, s2 in zip(params, grads, self.m, self.v,
                                      self._s1, self._s2):
            np.multiply(g, 1 - b1, out=s1)
            m *= b1
            m += s1
            np.multiply(g, 1 - b2, out=s1)
            s1 *= g
            v *= b2
            v += s1
            np.divide(m, c1, out=s1)
            np.divide(v, c2, out=s2)
            np.sqrt(s2, out=s2)
            s2 += self.eps
            s1 *= self.learning_rate
            s1 /= s2
            p -= s1


class ReplayBuffer:
    """Fixed-capacity ring of (s, a, r, next_s) transitions with uniform
    without-replacement batch sampling."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.size = 0
        self._next = 0

    def add(self, state, action, reward, next_state):
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng, batch_size: int):
        idx = rng.choice(self.size, batch_size, replace=False)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx])


def exploration_probability(episode: int, epsilon_decay: float) -> float:
    """Probability of acting randomly at the given episode index."""
    return 1.0 / (1.0 + episode / epsilon_decay)


def select_action(net: QNetwork, state, episode: int, cfg: AgentConfig, rng,
                  num_actions: int) -> int:
    """Epsilon-greedy over the flat action set; greedy ties go to the lowest
    index."""
    if rng.random() < exploration_probability(episode, cfg.epsilon_decay):
        return int(rng.integers(num_actions))
    return int(np.argmax(net.forward(state)))


def td_targets(rewards, next_states, main: QNetwork, target: QNetwork,
               gamma: float, use_double_q: bool):
    """Bootstrapped regression targets for a batch.

    Double-Q: the main network picks the next action, the target network
    evaluates it.  No terminal masking: episodes are truncations of a
    continuing task.
    """
    q_target = target.forward(next_states)
    if use_double_q:
        picks = np.argmax(main.forward(next_states), axis=1)
        boot = q_target[np.arange(len(picks)), picks]
    else:
        boot = q_target.max(axis=1)
    return rewards + gamma * boot


def train_step(net: QNetwork, adam: Adam, states, actions, targets) -> float:
    """One Adam step on the mean squared TD error of the batch.

    Targets are constants; the gradient flows only through the Q-values of
    the taken actions.
    """
    b = len(actions)
    q, acts = net.forward_cached(states)
    taken = q[np.arange(b), actions]
    resid = taken - targets
    loss = float(np.mean(resid ** 2))
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss!r}")
    dq = np.zeros_like(q)
    dq[np.arange(b), actions] = 2.0 * resid / b
    grads = net.backward(acts, dq)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged("non-finite gradient")
    adam.step(net.parameters(), grads)
    return loss


def soft_update(target: QNetwork, main: QNetwork, kappa: float) -> None:
    """Blend main parameters into the target: target <- k*main + (1-k)*target."""
    for tp, mp in zip(target.parameters(), main.parameters()):
        tp[...] = kappa * mp + (1.0 - kappa) * tp


class BatchWorkspace:
    """Preallocated buffers for the per-step learning update.

    Repeatedly allocating batch-sized float64 arrays goes through mmap on
    this allocation pattern and dominates the step time, so the trainer
    reuses one set of buffers.  Results are bit-identical to the plain
    td_targets/train_step/soft_update path (same operations, same order).
    """

    def __init__(self, layer_sizes, batch: int):
        outs = layer_sizes[1:]
        self.batch = batch
        self.rows = np.arange(batch)
        self.fwd = [np.empty((batch, n)) for n in outs]
        self.fwd2 = [np.empty((batch, n)) for n in outs]
        self.q_alt = np.empty((batch, outs[-1]))
        self.dq = np.zeros((batch, outs[-1]))
        self.masks = [np.empty((batch, n), dtype=bool) for n in outs[:-1]]
        self.gw = [np.empty((a, b)) for a, b in zip(layer_sizes, outs)]
        self.gb = [np.empty(n) for n in outs]
        self.scratch = [np.empty((a, b)) for a, b in zip(layer_sizes, outs)]
        self.scratch_b = [np.empty(n) for n in outs]

    def forward_into(self, net: QNetwork, x, bufs):
        """Forward pass writing each layer's activation into bufs[l]."""
        h = x
        last = len(net.weights) - 1
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            np.matmul(h, w, out=bufs[l])
            bufs[l] += b
            if l < last:
                np.maximum(bufs[l], 0.0, out=bufs[l])
            h = bufs[l]
        return bufs[-1]

    def learn_step(self, net: QNetwork, target: QNetwork, adam: "Adam",
                   states, actions, rewards, next_states, gamma: float,
                   use_double_q: bool, kappa: float) -> float:
        """td_targets + train_step + soft_update without heap churn."""
        rows = self.rows
        q_t = self.forward_into(target, next_states, self.fwd2)
        if use_double_q:
            # reuse the hidden buffers; q_t stays intact in fwd2[-1]
            h = next_states
            last = len(net.weights) - 1
            for l, (w, b) in enumerate(zip(net.weights, net.biases)):
                out = self.q_alt if l == last else self.fwd2[l]
                np.matmul(h, w, out=out)
                out += b
                if l < last:
                    np.maximum(out, 0.0, out=out)
                h = out
            boot = q_t[rows, np.argmax(self.q_alt, axis=1)]
        else:
            boot = q_t.max(axis=1)
        y = rewards + gamma * boot

        q = self.forward_into(net, states, self.fwd)
        resid = q[rows, actions] - y
        loss = float(np.mean(resid ** 2))
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss!r}")
        self.dq[rows, actions] = 2.0 * resid / self.batch
        inputs = [states] + self.fwd[:-1]
        delta = self.dq
        for l in range(len(net.weights) - 1, -1, -1):
            np.matmul(inputs[l].T, delta, out=self.gw[l])
            np.sum(delta, axis=0, out=self.gb[l])
            if l > 0:
                nxt = self.fwd2[l - 1]
                np.matmul(delta, net.weights[l].T, out=nxt)
                np.greater(self.fwd[l - 1], 0.0, out=self.masks[l - 1])
                nxt *= self.masks[l - 1]
                delta = nxt
        self.dq[rows, actions] = 0.0
        grads = []
        for gw, gb in zip(self.gw, self.gb):
            grads.append(gw)
            grads.append(gb)
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged("non-finite gradient")
        adam.step(net.parameters(), grads)

        k = kappa
        for tp, mp, sc in zip(target.parameters(), net.parameters(),
                              _pairs(self.scratch, self.scratch_b)):
            np.multiply(mp, k, out=sc)
            tp *= 1.0 - k
            tp += sc
        return loss


def _pairs(mats, vecs):
    out = []
    for m, v in zip(mats, vecs):
        out.append(m)
        out.append(v)
    return out


class Trainer:
    """Runs the training loop: per step an epsilon-greedy action, an
    environment step, replay storage, one gradient step on a sampled batch
    (once the buffer can fill one), and a soft target update."""

    def __init__(self, env: SyncPlaceEnv, cfg: AgentConfig, init_rng, explore_rng):
        cfg.validate()
        self.env = env
        self.cfg = cfg
        sizes = [env.state_dim, *cfg.hidden_sizes, env.num_actions]
        self.net = QNetwork(sizes, rng=init_rng)
        self.target = self.net.copy()
        self.adam = Adam(self.net.parameters(), cfg.learning_rate,
                         cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, env.state_dim)
        self.explore_rng = explore_rng
        self.episode = 0
        self._ws = None

    def _workspace(self) -> BatchWorkspace:
        if self._ws is None:
            self._ws = BatchWorkspace(self.net.layer_sizes, self.cfg.batch_size)
        return self._ws

    def _run_episode(self, learn: bool, p_explore: float) -> dict:
        env = self.env
        cfg = self.cfg
        cap = env.cfg.staleness_cap
        state = env.reset().encode(cap)
        stats = EpisodeStats()
        for _ in range(env.cfg.horizon):
            if learn and self.explore_rng.random() < p_explore:
                action_idx = int(self.explore_rng.integers(env.num_actions))
            else:
                action_idx = int(np.argmax(self.net.forward(state)))
            outcome = env.step(env.actions[action_idx])
            next_state = outcome.next_state.encode(cap)
            stats.add(outcome)
            if learn:
                self.buffer.add(state, action_idx, outcome.r_total, next_state)
                if self.buffer.size >= cfg.batch_size:
                    s, a, r, ns = self.buffer.sample(self.explore_rng, cfg.batch_size)
                    self._workspace().learn_step(
                        self.net, self.target, self.adam, s, a, r, ns,
                        cfg.gamma, cfg.use_double_q, cfg.soft_update_rate)
            state = next_state
        phase = "train" if learn else "eval"
        return stats.record(self.episode if learn else 0, phase, p_explore)

    def train(self, episodes: int = None, checkpoint_every: int = None,
              checkpoint_path=None) -> list:
        """Run training episodes; returns one record per episode."""
        episodes = self.cfg.episodes if episodes is None else episodes
        records = []
        for _ in range(episodes):
            self.episode += 1
            p = exploration_probability(self.episode, self.cfg.epsilon_decay)
            try:
                records.append(self._run_episode(learn=True, p_explore=p))
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"episode {self.episode}: {exc}") from exc
            if (checkpoint_every and checkpoint_path
                    and self.episode % checkpoint_every == 0):
                save_checkpoint(checkpoint_path, self)
        return records

    def evaluate(self, episodes: int) -> list:
        """Greedy rollouts of the frozen policy, no exploration or learning."""
        records = []
        for i in range(episodes):
            rec = self._run_episode(learn=False, p_explore=0.0)
            rec["episode"] = i + 1
            records.append(rec)
        return records


def run_training(env: SyncPlaceEnv, cfg: AgentConfig, init_rng, explore_rng,
                 episodes: int = None):
    """Train a fresh agent on `env`; returns (trained QNetwork, records)."""
    trainer = Trainer(env, cfg, init_rng, explore_rng)
    records = trainer.train(episodes)
    return trainer.net, records


# ---------------------------------------------------------------------------
# Checkpointing: JSON with exact float round-trip.


def _net_to_lists(net: QNetwork):
    return [
        {"w": w.tolist(), "b": b.tolist()}
        for w, b in zip(net.weights, net.biases)
    ]


def _net_from_lists(layer_sizes, layers) -> QNetwork:
    net = QNetwork.zeros(layer_sizes)
    net.weights = [np.array(layer["w"], dtype=np.float64) for layer in layers]
    net.biases = [np.array(layer["b"], dtype=np.float64) for layer in layers]
    return net


def save_checkpoint(path, trainer: Trainer) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(trainer.net.layer_sizes),
        "theta": _net_to_lists(trainer.net),
        "theta_target": _net_to_lists(trainer.target),
        "adam": {
            "step_count": trainer.adam.step_count,
            "m": [m.tolist() for m in trainer.adam.m],
            "v": [v.tolist() for v in trainer.adam.v],
        },
        "episode": trainer.episode,
        "explore_rng_state": trainer.explore_rng.bit_generator.state,
        "agent_config": asdict(trainer.cfg),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path, env: SyncPlaceEnv) -> Trainer:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    cfg_dict = payload["agent_config"]
    cfg_dict["hidden_sizes"] = tuple(cfg_dict["hidden_sizes"])
    cfg = AgentConfig(**cfg_dict)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = payload["explore_rng_state"]
    trainer = Trainer.__new__(Trainer)
    trainer.env = env
    trainer.cfg = cfg
    trainer.net = _net_from_lists(payload["layer_sizes"], payload["theta"])
    trainer.target = _net_from_lists(payload["layer_sizes"], payload["theta_target"])
    trainer.adam = Adam(trainer.net.parameters(), cfg.learning_rate,
                        cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trainer.adam.step_count = payload["adam"]["step_count"]
    trainer.adam.m = [np.array(m, dtype=np.float64) for m in payload["adam"]["m"]]
    trainer.adam.v = [np.array(v, dtype=np.float64) for v in payload["adam"]["v"]]
    trainer.buffer = ReplayBuffer(cfg.buffer_capacity, env.state_dim)
    trainer.explore_rng = rng
    trainer.episode = payload["episode"]
    trainer._ws = None
    return trainer
