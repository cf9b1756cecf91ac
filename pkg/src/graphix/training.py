"""Toy sequence-to-sequence training on top of the GRAPHIX encoder.

A small post-norm transformer decoder (masked self-attention, cross-attention
over the encoder states, feed-forward) is trained with teacher forcing to
maximise sum_i log p(y_i | y_<i, x, G) using plain gradient descent.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .graph import HeterogeneousGraph, LinkingMode, build_graph
from .layers import (EncoderConfig, EncoderInputs, attention_backward,
                     attention_forward, encoder_backward, encoder_forward, ffn_backward,
                     ffn_forward, init_encoder_params, param_group, _attention_params,
                     _ffn_params, _ln_params)
from .schema import Database, Question, make_database, make_question
from .serializer import SerializedInput, Vocabulary, serialize
from .tensor import ParamStore, grad_check, layer_norm_backward, layer_norm_forward


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        self.step, self.loss = step, loss
        super().__init__(f"loss became {loss} at step {step}")


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 1
    h: int = 4
    d_ff: int | None = None
    max_len: int = 16
    reduction: str = "mean"  # or "sum" over target tokens
    # Reuse the encoder position table so target step t and source token t
    # start out with identical position vectors.
    share_positions: bool = True

    def __post_init__(self):
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")


def init_decoder_params(enc: EncoderConfig, dec: DecoderConfig, store: ParamStore) -> ParamStore:
    d = enc.d_m
    if d % dec.h:
        raise ValueError(f"d_m={d} is not divisible by decoder heads {dec.h}")
    d_ff = dec.d_ff or 4 * d
    if not dec.share_positions:
        store.create("dec.positions", (dec.max_len, d))
    elif dec.max_len > enc.max_len:
        raise ValueError("shared positions need decoder max_len <= encoder max_len")
    for l in range(dec.layers):
        _attention_params(store, f"dec.{l}.self.", d, dec.h, d // dec.h, d // dec.h, d)
        _ln_params(store, f"dec.{l}.ln1.", d)
        _attention_params(store, f"dec.{l}.cross.", d, dec.h, d // dec.h, d // dec.h, d)
        _ln_params(store, f"dec.{l}.ln2.", d)
        _ffn_params(store, f"dec.{l}.ffn.", d, d_ff)
        _ln_params(store, f"dec.{l}.ln3.", d)
    store.create("dec.out.w", (d, enc.vocab_size))
    store.create("dec.out.b", (enc.vocab_size,), "zeros")
    return store


def init_model_params(enc: EncoderConfig, dec: DecoderConfig, seed: int = 0) -> ParamStore:
    store = init_encoder_params(enc, ParamStore(seed))
    return init_decoder_params(enc, dec, store)


def _positions(dec: DecoderConfig) -> str:
    return "embed.positions" if dec.share_positions else "dec.positions"


def decoder_forward(dec_ids: np.ndarray, h: np.ndarray, p, enc: EncoderConfig,
                    dec: DecoderConfig):
    t = dec_ids.size
    if t > dec.max_len:
        raise ValueError(f"target of {t} tokens exceeds decoder max_len={dec.max_len}")
    d_head = enc.d_m // dec.h
    causal = np.tril(np.ones((t, t), dtype=bool))
    x = p["embed.tokens"][dec_ids] + p[_positions(dec)][:t]
    caches = []
    for l in range(dec.layers):
        pre = f"dec.{l}."
        sa, c_sa = attention_forward(x, x, p, pre + "self.", dec.h, d_head, d_head, causal)
        a, c1 = layer_norm_forward(x + sa, p[pre + "ln1.g"], p[pre + "ln1.b"], enc.ln_eps)
        ca, c_ca = attention_forward(a, h, p, pre + "cross.", dec.h, d_head, d_head)
        b, c2 = layer_norm_forward(a + ca, p[pre + "ln2.g"], p[pre + "ln2.b"], enc.ln_eps)
        f, c_f = ffn_forward(b, p, pre + "ffn.")
        x, c3 = layer_norm_forward(b + f, p[pre + "ln3.g"], p[pre + "ln3.b"], enc.ln_eps)
        caches.append((pre, c_sa, c1, c_ca, c2, c_f, c3))
    logits = x @ p["dec.out.w"] + p["dec.out.b"]
    return logits, (dec_ids, x, caches, dec)


def decoder_backward(dlogits: np.ndarray, cache, p, grads) -> np.ndarray:
    """Returns the gradient with respect to the encoder states."""
    dec_ids, x, caches, cache_dec = cache
    grads["dec.out.w"] += x.T @ dlogits
    grads["dec.out.b"] += dlogits.sum(axis=0)
    dx = dlogits @ p["dec.out.w"].T
    dh = 0.0
    for pre, c_sa, c1, c_ca, c2, c_f, c3 in reversed(caches):
        d, dg, db = layer_norm_backward(dx, c3)
        grads[pre + "ln3.g"] += dg
        grads[pre + "ln3.b"] += db
        d_b = d + ffn_backward(d, c_f, p, grads)
        d, dg, db = layer_norm_backward(d_b, c2)
        grads[pre + "ln2.g"] += dg
        grads[pre + "ln2.b"] += db
        da, dh_l = attention_backward(d, c_ca, p, grads)
        dh = dh + dh_l
        d_a = d + da
        d, dg, db = layer_norm_backward(d_a, c1)
        grads[pre + "ln1.g"] += dg
        grads[pre + "ln1.b"] += db
        dq, dkv = attention_backward(d, c_sa, p, grads)
        dx = d + dq + dkv
    t = dec_ids.size
    np.add.at(grads["embed.tokens"], dec_ids, dx)
    grads[_positions(cache_dec)][:t] += dx
    return dh


def sequence_nll(logits: np.ndarray, targets: np.ndarray, reduction: str = "mean"):
    """Negative log-likelihood of ``targets`` under row-wise softmax of ``logits``.

    Returns ``(loss, dlogits)``.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(targets.size)
    loss = -logp[rows, targets].sum()
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    if reduction == "mean":
        loss, grad = loss / targets.size, grad / targets.size
    return float(loss), grad


@dataclass
class Example:
    x: SerializedInput
    graph: HeterogeneousGraph
    target: tuple[str, ...]
    _prepared: tuple | None = field(default=None, repr=False, compare=False)


class Seq2Seq:
    """Encoder, decoder and parameters bundled for loss, gradients and decoding."""

    def __init__(self, enc: EncoderConfig, dec: DecoderConfig, params: ParamStore,
                 vocab: Vocabulary):
        if len(vocab) > enc.vocab_size:
            raise ValueError(f"vocabulary of {len(vocab)} exceeds vocab_size={enc.vocab_size}")
        self.enc, self.dec, self.params, self.vocab = enc, dec, params, vocab

    def prepare(self, ex: Example):
        if ex._prepared is None:
            try:
                target = np.array(self.vocab.encode(ex.target, strict=True), dtype=np.int64)
            except KeyError as err:
                raise ValueError(f"unknown target token: {err.args[0]}") from None
            if target.size == 0:
                raise ValueError("empty target sequence")
            inputs = EncoderInputs.build(ex.x, ex.graph, self.vocab)
            dec_in = np.concatenate([[self.vocab.bos_id], target[:-1]]).astype(np.int64)
            ex._prepared = (inputs, dec_in, target)
        return ex._prepared

    def loss(self, ex: Example, params=None) -> float:
        p = self.params if params is None else params
        inputs, dec_in, target = self.prepare(ex)
        h, _ = encoder_forward(inputs, p, self.enc)
        logits, _ = decoder_forward(dec_in, h, p, self.enc, self.dec)
        return sequence_nll(logits, target, self.dec.reduction)[0]

    def loss_and_grads(self, ex: Example, grads: dict | None = None):
        p = self.params
        grads = self.params.zeros_like() if grads is None else grads
        inputs, dec_in, target = self.prepare(ex)
        h, enc_cache = encoder_forward(inputs, p, self.enc)
        logits, dec_cache = decoder_forward(dec_in, h, p, self.enc, self.dec)
        loss, dlogits = sequence_nll(logits, target, self.dec.reduction)
        dh = decoder_backward(dlogits, dec_cache, p, grads)
        encoder_backward(dh, enc_cache, p, grads)
        return loss, grads

    def greedy(self, ex: Example, length: int | None = None) -> list[str]:
        inputs, _, target = self.prepare(ex)
        h, _ = encoder_forward(inputs, self.params, self.enc)
        out = [self.vocab.bos_id]
        for _ in range(length or target.size):
            logits, _ = decoder_forward(np.array(out), h, self.params, self.enc, self.dec)
            out.append(int(np.argmax(logits[-1])))
        return self.vocab.decode(out[1:])

    def token_accuracy(self, examples: Sequence[Example]) -> float:
        hits = total = 0
        for ex in examples:
            pred = self.greedy(ex)
            hits += sum(a == b for a, b in zip(pred, ex.target))
            total += len(ex.target)
        return hits / max(total, 1)


# ---------------------------------------------------------------------------
# Toy tasks
# ---------------------------------------------------------------------------

COPY_WORDS = tuple(f"w{i}" for i in range(8))
COLUMN_POOL = ("age", "city", "color", "brand", "size", "genre", "rank", "price")
VALUE_POOL = ("paris", "red", "nike", "jazz", "small", "tokyo", "blue", "rock",
              "large", "adidas", "oslo", "green")
FILLER = ("show", "rows", "with", "find", "entries", "where", "get", "records")


@dataclass
class ToyTask:
    """Generator of (serialized input, graph, target) triples.

    ``copy``: the target repeats the question tokens.
    ``schema-echo``: the question holds one token linked to a column (by a
    value match by default, by exact match with ``link="exact"``); the target
    is that column's name.
    """
    kind: str = "copy"
    min_len: int = 3
    max_len: int = 6
    n_columns: int = 3
    n_filler: int = 3
    link: str = "value"
    mode: LinkingMode = LinkingMode.BRIDGE
    vocab: Vocabulary = field(init=False)

    def __post_init__(self):
        if self.kind not in ("copy", "schema-echo"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.link not in ("value", "exact"):
            raise ValueError(f"unknown link kind {self.link!r}")
        words = [*COPY_WORDS, *COLUMN_POOL, *VALUE_POOL, *FILLER, "toy", "item", "name", "data"]
        self.vocab = Vocabulary(words + ["|", ":", ",", "*"])

    @property
    def max_target_len(self) -> int:
        return self.max_len if self.kind == "copy" else 1

    def _example(self, q: Question, db: Database, target: Sequence[str]) -> Example:
        return Example(serialize(q, db), build_graph(q, db, self.mode), tuple(target))

    def sample(self, rng: np.random.Generator) -> Example:
        if self.kind == "copy":
            n = int(rng.integers(self.min_len, self.max_len + 1))
            words = [COPY_WORDS[i] for i in rng.integers(0, len(COPY_WORDS), n)]
            db = make_database("toy", [("item", ["name"])])
            return self._example(make_question(words), db, words)
        names = [COLUMN_POOL[i] for i in rng.choice(len(COLUMN_POOL), self.n_columns, replace=False)]
        filler = [FILLER[i] for i in rng.integers(0, len(FILLER), self.n_filler)]
        target = int(rng.integers(self.n_columns))
        if self.link == "value":
            values = rng.choice(len(VALUE_POOL), 2 * self.n_columns, replace=False)
            cols = [{"name": nm, "values": [VALUE_POOL[values[2 * k]], VALUE_POOL[values[2 * k + 1]]]}
                    for k, nm in enumerate(names)]
            key = VALUE_POOL[values[2 * target + int(rng.integers(2))]]
        else:
            cols = list(names)
            key = names[target]
        pos = int(rng.integers(0, len(filler) + 1))
        words = filler[:pos] + [key] + filler[pos:]
        db = make_database("data", [("item", cols)])
        return self._example(make_question(words), db, [names[target]])

    def batch(self, rng: np.random.Generator, size: int) -> list[Example]:
        return [self.sample(rng) for _ in range(size)]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 0.1
    batch_size: int = 8
    seed: int = 0
    task_seed: int = 1
    # Draw a fixed pool of this many examples up front and cycle through it;
    # None samples a fresh batch every step.
    train_size: int | None = None


def sgd_step(params: ParamStore, grads: dict, lr: float) -> None:
    for name, g in grads.items():
        params[name] -= lr * g


def train(task: ToyTask, enc: EncoderConfig, dec: DecoderConfig, cfg: TrainConfig,
          params: ParamStore | None = None):
    """Plain mini-batch gradient descent. Returns ``(model, trace)`` where
    ``trace`` lists ``(step, mean batch loss before the update)``."""
    if cfg.steps < 1:
        raise ValueError("steps must be at least 1")
    if cfg.batch_size < 1 or (cfg.train_size is not None and cfg.train_size < 1):
        raise ValueError("batch_size and train_size must be positive")
    enc = replace(enc, vocab_size=max(enc.vocab_size, len(task.vocab)))
    if params is None:
        params = init_model_params(enc, dec, cfg.seed)
    model = Seq2Seq(enc, dec, params, task.vocab)
    rng = np.random.default_rng(cfg.task_seed)
    pool = task.batch(rng, cfg.train_size) if cfg.train_size else None
    trace = []
    for step in range(cfg.steps):
        grads = params.zeros_like()
        if pool is None:
            batch = task.batch(rng, cfg.batch_size)
        else:
            start = step * cfg.batch_size
            batch = [pool[(start + k) % len(pool)] for k in range(cfg.batch_size)]
        total = 0.0
        for ex in batch:
            loss, _ = model.loss_and_grads(ex, grads)
            total += loss
        loss = total / len(batch)
        if not math.isfinite(loss):
            raise TrainingDiverged(step, loss)
        for g in grads.values():
            g /= len(batch)
        sgd_step(params, grads, cfg.lr)
        trace.append((step, loss))
    return model, trace


def gradient_check(enc: EncoderConfig, dec: DecoderConfig, seed: int = 0, eps: float = 1e-5,
                   task: ToyTask | None = None, report: dict | None = None) -> float:
    """Max relative error of the full encoder-decoder loss gradient.

    One example is drawn from ``task`` (a small schema-echo instance by
    default) and every parameter entry is compared against central
    differences.
    """
    task = task or ToyTask("schema-echo", n_columns=2, n_filler=1)
    enc = replace(enc, vocab_size=max(enc.vocab_size, len(task.vocab)))
    params = init_model_params(enc, dec, seed)
    model = Seq2Seq(enc, dec, params, task.vocab)
    ex = task.sample(np.random.default_rng(seed))
    _, grads = model.loss_and_grads(ex)
    return grad_check(lambda p: model.loss(ex, p), params, grads, eps, report=report)


def trace_to_csv(trace: Iterable[tuple[int, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "loss"])
    for step, loss in trace:
        writer.writerow([step, repr(float(loss))])
    return buf.getvalue()


def group_changes(before: ParamStore, after: ParamStore) -> dict[str, bool]:
    """Whether any parameter in each group (theta/psi/phi/upsilon) changed."""
    changed: dict[str, bool] = {}
    for name in before:
        g = param_group(name)
        changed[g] = changed.get(g, False) or not np.array_equal(before[name], after[name])
    return changed
