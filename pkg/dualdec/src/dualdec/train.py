"""Toy key-value recall task: the guided context carries "k:v" pairs and the
prompt asks "k=". The value for a queried key exists nowhere in the prompt
stream, so answering is only possible through cross-attention into the
guided states; masking the guidance collapses accuracy to chance.

Training prompts are teacher-forced multi-query strings ("c=2 a=3") so every
'=' position contributes loss; evaluation asks a single "k=" query, matching
what generate() does at inference.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass

import numpy as np

from .config import PAD_ID, DualDecoderConfig
from .model import ModelError, forward, generate, init_params, loss_and_grads

KEYS = "abcdef"
VALUES = "0123456789"
N_PAIRS = 2
CHARSET = sorted(set(KEYS + VALUES + ": =?"))
VOCAB = {ch: i + 1 for i, ch in enumerate(CHARSET)}  # 0 is PAD
VOCAB_SIZE = len(VOCAB) + 1


class TrainingDiverged(Exception):
    def __init__(self, step: int, loss):
        super().__init__(f"loss became non-finite at step {step}: {loss}")
        self.step = step


def encode_text(text: str) -> list[int]:
    try:
        return [VOCAB[ch] for ch in text]
    except KeyError as exc:
        raise ModelError(f"character {exc.args[0]!r} not in toy vocabulary") from exc


@dataclass(frozen=True)
class KvExample:
    guided: str          # "c:2 a:3"
    keys: tuple[str, ...]    # query order
    values: tuple[str, ...]  # aligned answers

    @property
    def teacher_prompt(self) -> str:
        return " ".join(f"{k}={v}" for k, v in zip(self.keys, self.values))

    @property
    def query(self) -> str:
        return f"{self.keys[0]}="

    @property
    def answer(self) -> str:
        return self.values[0]


def make_example(rng: random.Random, n_pairs: int = N_PAIRS) -> KvExample:
    ks = rng.sample(KEYS, n_pairs)
    vs = [rng.choice(VALUES) for _ in ks]
    guided = " ".join(f"{k}:{v}" for k, v in zip(ks, vs))
    order = list(range(n_pairs))
    rng.shuffle(order)
    return KvExample(guided=guided,
                     keys=tuple(ks[i] for i in order),
                     values=tuple(vs[i] for i in order))


def make_batch(examples: list[KvExample]):
    """Teacher-forced training batch: loss at every '=' position."""
    prompts = [e.teacher_prompt for e in examples]
    guided_len = max(len(e.guided) for e in examples)
    prompt_len = max(len(p) for p in prompts)
    guided = np.full((len(examples), guided_len), PAD_ID, dtype=np.int64)
    prompt = np.full((len(examples), prompt_len), PAD_ID, dtype=np.int64)
    targets = np.full((len(examples), prompt_len), -1, dtype=np.int64)
    eq = VOCAB["="]
    for i, e in enumerate(examples):
        g = encode_text(e.guided)
        p = encode_text(prompts[i])
        guided[i, : len(g)] = g
        prompt[i, : len(p)] = p
        for j in range(len(p) - 1):
            if p[j] == eq:
                targets[i, j] = p[j + 1]
    return prompt, guided, targets


def make_query_batch(examples: list[KvExample]):
    """Single-query evaluation batch: prompt "k=", answer at the last position."""
    guided_len = max(len(e.guided) for e in examples)
    guided = np.full((len(examples), guided_len), PAD_ID, dtype=np.int64)
    prompt = np.zeros((len(examples), 2), dtype=np.int64)
    answers = np.zeros(len(examples), dtype=np.int64)
    for i, e in enumerate(examples):
        g = encode_text(e.guided)
        guided[i, : len(g)] = g
        prompt[i] = encode_text(e.query)
        answers[i] = encode_text(e.answer)[0]
    return prompt, guided, answers


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    state["t"] += 1
    t = state["t"]
    for key, grad in grads.items():
        m = state["m"][key] = beta1 * state["m"][key] + (1 - beta1) * grad
        v = state["v"][key] = beta2 * state["v"][key] + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def recall_accuracy(params, config, examples, mask_guidance: bool = False) -> float:
    """Fraction of single-key queries answered with the correct value token."""
    prompt, guided, answers = make_query_batch(examples)
    if mask_guidance:
        guided = np.full_like(guided, PAD_ID)
    result = forward(prompt, guided, params, config)
    predictions = result.logits[:, -1, :].argmax(-1)
    return float((predictions == answers).mean())


def generation_accuracy(params, config, examples, mask_guidance: bool = False) -> float:
    """Same recall measured through greedy generate(), one new token per query."""
    prompt, guided, answers = make_query_batch(examples)
    if mask_guidance:
        guided = np.full_like(guided, PAD_ID)
    out = generate(prompt, guided, params, config, max_new=1)
    return float((out[:, -1] == answers).mean())


def default_config(seed: int = 0) -> DualDecoderConfig:
    return DualDecoderConfig(vocab_size=VOCAB_SIZE, d_model=64, n_heads=4, n_layers=2,
                             max_len=32, seed=seed)


def train_toy(config: DualDecoderConfig = None, steps: int = 1600, batch_size: int = 48,
              lr: float = 1e-3, warmup: int = 100, seed: int = 0, eval_every: int = 200,
              metrics_path=None):
    """Train on the synthetic recall corpus; returns (params, history)."""
    config = config or default_config(seed)
    rng = random.Random(seed)
    params = init_params(config)
    state = {"t": 0,
             "m": {k: np.zeros_like(v) for k, v in params.items()},
             "v": {k: np.zeros_like(v) for k, v in params.items()}}
    heldout = [make_example(random.Random(10_000 + i)) for i in range(200)]
    history = []
    for step in range(1, steps + 1):
        batch = [make_example(rng) for _ in range(batch_size)]
        prompt, guided, targets = make_batch(batch)
        try:
            loss, grads = loss_and_grads(prompt, guided, targets, params, config)
        except ModelError as exc:
            if "non-finite" in str(exc):
                raise TrainingDiverged(step, float("nan")) from exc
            raise
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        adam_step(params, grads, state, lr * min(1.0, step / max(warmup, 1)))
        if step % eval_every == 0 or step == steps:
            accuracy = recall_accuracy(params, config, heldout)
            history.append({"step": step, "loss": float(loss), "accuracy": accuracy})
    if metrics_path is not None:
        with open(metrics_path, "w", encoding="utf-8") as fh:
            for row in history:
                fh.write(json.dumps(row) + "\n")
    return params, history


def answer_query(params, config, guided_text: str, key: str) -> str:
    """Greedy one-token answer for ``key`` given the guided context."""
    guided = np.array([encode_text(guided_text)], dtype=np.int64)
    prompt = np.array([encode_text(f"{key}=")], dtype=np.int64)
    out = generate(prompt, guided, params, config, max_new=1)
    inverse = {v: k for k, v in VOCAB.items()}
    return inverse.get(int(out[0, -1]), "?")


def save_checkpoint(path, params, config: DualDecoderConfig) -> None:
    arrays = {f"param/{k}": v for k, v in params.items()}
    arrays["__config__"] = np.frombuffer(
        json.dumps(config.to_dict()).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    data = np.load(path)
    config = DualDecoderConfig.from_dict(
        json.loads(bytes(data["__config__"]).decode("utf-8")))
    params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
    return params, config
