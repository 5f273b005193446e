"""Speaker and listener networks sharing one set of embeddings.

The speaker maps a meaning to an utterance: the three slot embeddings
(action, agent, patient) are concatenated, linearly mapped to the initial
GRU state, and the GRU decodes word logits step by step. The listener runs
a second GRU over the utterance's word embeddings and reads the final state
with three softmax heads (action, agent, patient).

Batched methods take meanings as an int array (B, 3) in slot order
``[action, agent, patient]`` and utterances as a padded int array (B, T)
with a lengths vector.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .language import Inventory, Meaning
from .nn import (
    DTYPE,
    GruParams,
    Linear,
    Param,
    _gru_cell,
    embedding_backward,
    gru_backward_seq,
    gru_forward_seq,
    log_softmax,
    make_rng,
    sample_categorical,
    softmax,
    softmax_xent,
    uniform_init,
)

log = logging.getLogger(__name__)

INIT_STREAM = 0
TRAIN_STREAM = 2
CHECKPOINT_MAGIC = b"DCMSIM-CKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    meaning_dim: int = 8
    word_dim: int = 16
    hidden_dim: int = 16
    max_len: int = 10
    init_scale: float = 0.1


@dataclass
class SpeakRecord:
    utterance: list[int]
    logprobs: list[float] = field(default_factory=list)
    ended: bool = True


def meanings_to_array(meanings: Sequence[Meaning]) -> np.ndarray:
    return np.asarray(meanings, dtype=np.int64).reshape(-1, 3)


def pad_utterances(utterances: Sequence[Sequence[int]], pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(u) for u in utterances], dtype=np.int64)
    T = int(lengths.max()) if len(lengths) else 0
    out = np.full((len(utterances), T), pad, dtype=np.int64)
    for i, u in enumerate(utterances):
        out[i, :len(u)] = u
    return out, lengths


def unpad(tokens: np.ndarray, lengths: np.ndarray) -> list[list[int]]:
    return [tokens[i, :n].tolist() for i, n in enumerate(lengths)]


class Agent:
    """One agent: a speaking and a listening network with tied embeddings."""

    def __init__(self, inv: Inventory, seed: int, cfg: ModelConfig = ModelConfig()):
        self.inv = inv
        self.cfg = cfg
        self.seed = int(seed)
        rng = make_rng(seed, INIT_STREAM)
        s = cfg.init_scale
        V = inv.vocab_size + 1  # external words + eos
        self.meaning_emb = uniform_init(rng, (inv.n_meaning_rows, cfg.meaning_dim), s)
        self.word_emb = uniform_init(rng, (V, cfg.word_dim), s)
        self.speaker_init = Linear(3 * cfg.meaning_dim, cfg.hidden_dim, rng, s)
        self.speaker_gru = GruParams(cfg.word_dim, cfg.hidden_dim, rng, s)
        self.speaker_out = Linear(cfg.hidden_dim, V, rng, s)
        self.listener_gru = GruParams(cfg.word_dim, cfg.hidden_dim, rng, s)
        self.head_action = Linear(cfg.hidden_dim, inv.n_actions, rng, s)
        self.head_agent = Linear(cfg.hidden_dim, inv.n_entities, rng, s)
        self.head_patient = Linear(cfg.hidden_dim, inv.n_entities, rng, s)
        self.rng = make_rng(seed, TRAIN_STREAM)

    # ------------------------------------------------------------ params
    def named_params(self) -> dict[str, Param]:
        out = {"meaning_emb": self.meaning_emb, "word_emb": self.word_emb}
        for name in ("speaker_init", "speaker_gru", "speaker_out", "listener_gru",
                     "head_action", "head_agent", "head_patient"):
            layer = getattr(self, name)
            keys = ("W", "U", "b") if isinstance(layer, GruParams) else ("W", "b")
            for k in keys:
                out[f"{name}.{k}"] = getattr(layer, k)
        return out

    def params(self) -> list[Param]:
        return list(self.named_params().values())

    def shared_params(self) -> list[Param]:
        return [self.meaning_emb, self.word_emb]

    def speaker_params(self) -> list[Param]:
        return (self.speaker_init.params() + self.speaker_gru.params()
                + self.speaker_out.params())

    def listener_params(self) -> list[Param]:
        return (self.listener_gru.params() + self.head_action.params()
                + self.head_agent.params() + self.head_patient.params())

    def role_params(self, speaker: bool, listener: bool) -> list[Param]:
        out = self.shared_params() if (speaker or listener) else []
        if speaker:
            out += self.speaker_params()
        if listener:
            out += self.listener_params()
        return out

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def reset_optimizer(self):
        for p in self.params():
            p.reset_optimizer()

    # ------------------------------------------------------------ speaker
    def _meaning_rows(self, M: np.ndarray) -> np.ndarray:
        rows = M.copy()
        rows[:, 0] += self.inv.n_entities
        return rows

    def _encode_meaning(self, M: np.ndarray):
        rows = self._meaning_rows(M)
        e = self.meaning_emb.value[rows].reshape(len(M), -1)
        return rows, e, self.speaker_init.forward(e)

    def speaker_loss(self, M: np.ndarray, tokens: np.ndarray, lengths: np.ndarray,
                     ended: np.ndarray | None = None, weights: np.ndarray | None = None,
                     entropy_coef: float = 0.0, backward: bool = True) -> float:
        """Teacher-forced token cross-entropy, summed over steps, averaged over rows.

        Row ``i`` is scored on ``tokens[i, :lengths[i]]`` followed by eos when
        ``ended[i]`` (default: always). ``weights`` scales each row's loss;
        with weights equal to ``r - b`` this is the REINFORCE surrogate for
        already-sampled utterances. Gradients are accumulated when
        ``backward`` is set.
        """
        B = len(M)
        eos = self.inv.eos
        ended = np.ones(B, dtype=bool) if ended is None else np.asarray(ended, dtype=bool)
        steps = lengths + ended
        S = int(steps.max())
        tgt = np.full((B, S), eos, dtype=np.int64)
        T = min(tokens.shape[1], S)
        body = np.arange(T)[None, :] < lengths[:, None]
        tgt[:, :T] = np.where(body, tokens[:, :T], eos)
        inp = np.empty_like(tgt)
        inp[:, 0] = eos
        inp[:, 1:] = tgt[:, :-1]
        mask = (np.arange(S)[None, :] < steps[:, None]).T.astype(DTYPE)  # (S, B)
        w = mask / B if weights is None else mask * (np.asarray(weights, dtype=DTYPE) / B)[None, :]

        rows, e, h0 = self._encode_meaning(M)
        X = self.word_emb.value[inp.T]
        hs, cache = gru_forward_seq(X, h0, self.speaker_gru)
        logits = self.speaker_out.forward(hs)
        V = logits.shape[-1]
        step_loss, dlog = softmax_xent(logits.reshape(-1, V), tgt.T.reshape(-1))
        loss = float(np.sum(step_loss * w.reshape(-1)))
        dlog *= w.reshape(-1, 1)
        if entropy_coef:
            logp = log_softmax(logits.reshape(-1, V))
            p = np.exp(logp)
            ent = -(p * logp).sum(axis=1)
            em = (mask / B).reshape(-1)
            loss -= entropy_coef * float(np.sum(ent * em))
            dlog += (entropy_coef * em)[:, None] * p * (logp + ent[:, None])
        if not backward:
            return loss
        dhs = self.speaker_out.backward(hs, dlog.reshape(S, B, V))
        dX, dh0 = gru_backward_seq(cache, dhs)
        embedding_backward(self.word_emb, inp.T, dX)
        de = self.speaker_init.backward(e, dh0)
        embedding_backward(self.meaning_emb, rows, de.reshape(B, 3, -1))
        return loss

    def decode(self, M: np.ndarray, greedy: bool = True, rng: np.random.Generator | None = None):
        """Autoregressive generation.

        Returns ``(tokens, lengths, ended, logprobs)``: tokens (B, T) padded
        with eos, lengths (B,), ended (B,) whether eos was emitted, and
        logprobs (B, max_len) of the chosen symbols (0 after the end).
        """
        if not greedy and rng is None:
            raise ValueError("sampling requires an rng")
        B = len(M)
        L = self.cfg.max_len
        eos = self.inv.eos
        H = self.cfg.hidden_dim
        _, _, h = self._encode_meaning(M)
        W = self.speaker_gru.W.value
        b = self.speaker_gru.b.value
        U = self.speaker_gru.U.value
        tokens = np.full((B, L), eos, dtype=np.int64)
        logps = np.zeros((B, L))
        lengths = np.zeros(B, dtype=np.int64)
        ended = np.zeros(B, dtype=bool)
        alive = np.ones(B, dtype=bool)
        prev = np.full(B, eos, dtype=np.int64)
        rows = np.arange(B)
        for t in range(L):
            h = _gru_cell(self.word_emb.value[prev] @ W.T + b, h, U, H)[0]
            logits = self.speaker_out.forward(h)
            logp = log_softmax(logits)
            choice = logits.argmax(axis=1) if greedy else sample_categorical(logits, rng)
            logps[:, t] = np.where(alive, logp[rows, choice], 0.0)
            stop = choice == eos
            emit = alive & ~stop
            tokens[emit, t] = choice[emit]
            lengths += emit
            ended |= alive & stop
            alive = emit
            if not alive.any():
                break
            prev = choice
        T = int(lengths.max()) if B else 0
        return tokens[:, :T], lengths, ended, logps

    # ------------------------------------------------------------ listener
    def _listen_forward(self, tokens: np.ndarray, lengths: np.ndarray):
        B = len(lengths)
        H = self.cfg.hidden_dim
        T = tokens.shape[1] if tokens.ndim == 2 else 0
        h0 = np.zeros((B, H))
        if T == 0:
            return None, None, h0
        X = self.word_emb.value[tokens.T]
        mask = (np.arange(T)[:, None] < lengths[None, :]).astype(DTYPE)
        hs, cache = gru_forward_seq(X, h0, self.listener_gru, mask)
        return X, cache, hs[-1]

    def listen_logits(self, tokens: np.ndarray, lengths: np.ndarray):
        _, _, h = self._listen_forward(tokens, lengths)
        out = [self.head_action.forward(h), self.head_agent.forward(h), self.head_patient.forward(h)]
        empty = lengths == 0
        if empty.any():
            log.debug("listener received %d empty utterances; using uniform output", int(empty.sum()))
            for lg in out:
                lg[empty] = 0.0
        return out

    def listen_batch(self, tokens: np.ndarray, lengths: np.ndarray):
        return [softmax(lg) for lg in self.listen_logits(tokens, lengths)]

    def predict_batch(self, tokens: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Argmax meaning per row, as an (B, 3) array."""
        return np.stack([lg.argmax(axis=1) for lg in self.listen_logits(tokens, lengths)], axis=1)

    def listener_loss(self, tokens: np.ndarray, lengths: np.ndarray, M: np.ndarray,
                      weights: np.ndarray | None = None, backward: bool = True) -> float:
        """Sum of the three head cross-entropies, averaged over rows."""
        B = len(M)
        X, cache, h = self._listen_forward(tokens, lengths)
        heads = (self.head_action, self.head_agent, self.head_patient)
        w = np.full(B, 1.0 / B) if weights is None else np.asarray(weights, dtype=DTYPE) / B
        live = lengths > 0
        w = np.where(live, w, 0.0)
        loss = 0.0
        dh = np.zeros_like(h)
        for k, head in enumerate(heads):
            lg = head.forward(h)
            lg[~live] = 0.0
            row_loss, dlg = softmax_xent(lg, M[:, k])
            loss += float(np.sum(row_loss * w))
            if backward:
                dlg *= w[:, None]
                dh += head.backward(h, dlg)
        if backward and cache is not None:
            dX, _ = gru_backward_seq(cache, None, dh_last=dh)
            embedding_backward(self.word_emb, tokens.T, dX)
        return loss

    # ------------------------------------------------------------ checkpoints
    def save(self, path, meta: dict | None = None) -> None:
        named = self.named_params()
        header = {
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "inventory": [self.inv.n_amb, self.inv.n_unamb, self.inv.n_actions],
            "model": asdict(self.cfg),
            "tensors": [{"name": k, "shape": list(p.shape), "step": p.step_count} for k, p in named.items()],
            "rng_state": self.rng.bit_generator.state,
            "meta": meta or {},
        }
        blob = b"".join(
            np.ascontiguousarray(arr, dtype="<f8").tobytes()
            for p in named.values() for arr in (p.value, p.adam_m, p.adam_v)
        )
        head = json.dumps(header, sort_keys=True).encode()
        path = Path(path)
        tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
        tmp.write_bytes(CHECKPOINT_MAGIC + b"\n" + head + b"\n" + blob)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Agent":
        raw = Path(path).read_bytes()
        magic, head, blob = raw.split(b"\n", 2)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint")
        header = json.loads(head)
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        agent = cls(Inventory(*header["inventory"]), header["seed"], ModelConfig(**header["model"]))
        named = agent.named_params()
        off = 0
        for t in header["tensors"]:
            p = named[t["name"]]
            if list(p.shape) != t["shape"]:
                raise ValueError(f"shape mismatch for {t['name']}: {p.shape} vs {t['shape']}")
            n = int(np.prod(t["shape"])) * 8
            for arr in (p.value, p.adam_m, p.adam_v):
                arr[...] = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=off).reshape(arr.shape)
                off += n
            p.step_count = t["step"]
        if off != len(blob):
            raise ValueError("trailing bytes in checkpoint")
        agent.rng.bit_generator.state = header["rng_state"]
        agent.meta = header["meta"]
        return agent


# --------------------------------------------------------------------------
# Single-item API


def speak(agent: Agent, m: Meaning, mode: str = "greedy", rng: np.random.Generator | None = None) -> SpeakRecord:
    greedy = mode == "greedy"
    if not greedy and mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    tokens, lengths, ended, logps = agent.decode(meanings_to_array([m]), greedy=greedy, rng=rng)
    n = int(lengths[0])
    steps = n + int(ended[0])
    return SpeakRecord(tokens[0, :n].tolist(), logps[0, :steps].tolist(), bool(ended[0]))


def listen(agent: Agent, u: Sequence[int]):
    """Action, agent and patient distributions for one utterance."""
    tokens, lengths = pad_utterances([list(u)])
    return tuple(d[0] for d in agent.listen_batch(tokens, lengths))


def predict_meaning(dists) -> Meaning:
    a, ag, pt = (int(np.argmax(d)) for d in dists)
    return Meaning(a, ag, pt)
