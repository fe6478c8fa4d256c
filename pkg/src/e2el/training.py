"""Max-margin training loop with early stopping, plus checkpoint io.

Every (span, candidate) pair of a document contributes a hinge: gold pairs
are pushed above the margin, all other candidates below zero. One Adam
step runs per document. The dev set is scored periodically; the decode
threshold is re-tuned each time, the best macro-F1 parameter snapshot is
kept, and training stops after a configured number of evaluations without
significant improvement.

Checkpoint format: magic ``E2EL``, little-endian; per entry a u16 name
length, the UTF-8 name, u8 rank, u32 per dimension, the 32-bit float
payload and a trailing u32 CRC32 of the payload bytes. Entries run to the
end of the file.

Training log records are JSON lines ``{step, loss, dev_macro_f1, delta}``.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import inference
from .candidates import AliasIndex, MentionSpan, apply_coreference_heuristic, \
    enumerate_spans, spans_for_gold
from .corpus import Document

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"E2EL"


@dataclass
class TrainConfig:
    gamma: float = 0.2
    learning_rate: float = 0.001
    regime: str = "all_spans"  # or "gold_spans"
    use_attention: bool = False
    use_global: bool = False
    eval_every: int = 500
    patience: int = 6
    seed: int = 0
    improvement: float = 1e-4  # minimum macro-F1 gain that counts
    max_steps: int | None = None
    use_coref: bool = True

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.regime not in ("all_spans", "gold_spans"):
            raise ValueError(f"unknown regime {self.regime!r}")


def violation(score: ad.Tensor, is_gold: bool, gamma: float) -> ad.Tensor:
    """Hinge pushing gold scores above gamma and the rest below zero."""
    if is_gold:
        g = ad.constant(np.asarray(gamma, dtype=score.data.dtype))
        return ad.relu(ad.sub(g, score))
    return ad.relu(score)


@dataclass
class LossResult:
    loss: ad.Tensor
    n_pairs: int = 0
    gold_pairs: int = 0
    gold_covered: int = 0  # gold pairs whose entity is among the span's candidates

    @property
    def trainable(self) -> bool:
        return self.loss.requires_grad


def spans_for_regime(doc: Document, index: AliasIndex, cfg: TrainConfig) -> list[MentionSpan]:
    if cfg.regime == "gold_spans":
        return spans_for_gold(doc, index)
    spans = enumerate_spans(doc, index)
    if cfg.use_coref:
        spans = apply_coreference_heuristic(spans, doc)
    return spans


def document_loss(doc: Document, spans: Sequence[MentionSpan],
                  gold: Sequence[tuple[int, int, str]], model, cfg: TrainConfig,
                  rng: np.random.Generator | None = None,
                  mode: str = "train") -> LossResult:
    """Sum of violations over every (span, candidate) pair of the document."""
    gold_set = {(s, e, ent) for s, e, ent in gold}
    covered = 0
    for s, e, ent in gold_set:
        if any(sp.start == s and sp.end == e and
               any(c.entity_id == ent for c in sp.candidates) for sp in spans):
            covered += 1
        else:
            log.debug("document %s: gold (%d, %d, %s) not coverable by candidates",
                      doc.doc_id, s, e, ent)
    pairs = model.pair_scores(doc, spans, mode=mode, rng=rng)
    if not pairs:
        log.warning("document %s: no scorable spans, loss is 0", doc.doc_id)
        return LossResult(loss=ad.constant(np.asarray(0.0, dtype=ad.default_dtype())),
                          gold_pairs=len(gold_set), gold_covered=covered)
    terms = []
    for p in pairs:
        is_gold = (p.span.start, p.span.end, p.entity_id) in gold_set
        terms.append(violation(p.psi, is_gold, cfg.gamma))
        if cfg.use_global:
            if p.phi is None:
                raise ValueError("global training requires phi scores")
            terms.append(violation(p.phi, is_gold, cfg.gamma))
    return LossResult(loss=ad.addn(terms), n_pairs=len(pairs),
                      gold_pairs=len(gold_set), gold_covered=covered)


@dataclass
class TrainResult:
    delta: float
    best_macro_f1: float
    steps: int
    history: list[dict] = field(default_factory=list)


def _dev_eval(model, dev_corpus: Sequence[Document], index: AliasIndex,
              cfg: TrainConfig) -> tuple[float, float]:
    """Returns (delta, strong macro F1) on the dev corpus."""
    gold = {doc.doc_id: list(doc.gold) for doc in dev_corpus}
    if cfg.regime == "gold_spans":
        annotations = []
        for doc in dev_corpus:
            annotations.extend(inference.decode_ed(model, doc, spans_for_gold(doc, index)))
        report = inference.evaluate(annotations, gold, mode="strong", task="ED")
        return float("-inf"), report.macro_f1
    pairs = []
    for doc in dev_corpus:
        pairs.extend(model.score_pairs(doc, spans_for_regime(doc, index, cfg)))
    delta = inference.select_threshold(pairs, gold, mode="strong")
    report = inference.evaluate(inference.greedy_decode(pairs, delta), gold,
                                mode="strong", task="EL")
    return delta, report.macro_f1


def train(corpus: Sequence[Document], dev_corpus: Sequence[Document], model,
          index: AliasIndex, cfg: TrainConfig,
          log_fn: Callable[[dict], None] | None = None) -> TrainResult:
    """Optimize the model until dev macro F1 stops improving.

    One Adam step per document, documents shuffled per epoch from the run
    seed. Every `eval_every` steps the dev threshold is re-tuned and the
    best parameter snapshot kept; training stops after `patience`
    evaluations without improvement (or at `max_steps`). The best snapshot
    is restored into the model before returning.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    shuffle_rng = ad.rng_stream(cfg.seed, "shuffle")
    dropout_rng = ad.rng_stream(cfg.seed, "dropout")
    adam = ad.AdamState(lr=cfg.learning_rate)
    step = 0
    best_f1 = -1.0
    best_delta = float("-inf")
    best_state: dict[str, np.ndarray] | None = None
    stale = 0
    history: list[dict] = []
    stop = False

    spans_cache = {doc.doc_id: spans_for_regime(doc, index, cfg) for doc in corpus}

    def run_eval(loss_value: float) -> None:
        nonlocal best_f1, best_delta, best_state, stale, stop
        delta, macro_f1 = _dev_eval(model, dev_corpus, index, cfg)
        record = {"step": step, "loss": loss_value, "dev_macro_f1": macro_f1,
                  "delta": None if math.isinf(delta) else delta}
        history.append(record)
        if log_fn is not None:
            log_fn(record)
        log.info("step %d: loss %.4f dev macro F1 %.4f delta %s",
                 step, loss_value, macro_f1, record["delta"])
        if macro_f1 > best_f1 + cfg.improvement:
            best_f1 = macro_f1
            best_delta = delta
            best_state = model.params.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                stop = True

    last_loss = 0.0
    while not stop:
        order = list(range(len(corpus)))
        shuffle_rng.shuffle(order)
        for i in order:
            doc = corpus[i]
            try:
                result = document_loss(doc, spans_cache[doc.doc_id], doc.gold, model,
                                       cfg, rng=dropout_rng)
                if result.trainable:
                    model.params.zero_grad()
                    ad.backward(result.loss)
                    ad.adam_step(adam, model.params.tensors(), model.params.grads())
            except FloatingPointError as exc:
                raise FloatingPointError(
                    f"non-finite loss on document {doc.doc_id!r}: {exc}") from exc
            last_loss = result.loss.item()
            step += 1
            if step % cfg.eval_every == 0:
                run_eval(last_loss)
                if stop:
                    break
            if cfg.max_steps is not None and step >= cfg.max_steps:
                stop = True
                break

    if best_state is None:
        # never evaluated (e.g. max_steps below eval_every): evaluate once now
        run_eval(last_loss)
    if best_state is not None:
        model.params.load_state_dict(best_state)
    return TrainResult(delta=best_delta, best_macro_f1=best_f1, steps=step,
                       history=history)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(tensors: Mapping[str, np.ndarray], path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in tensors.items():
            data = np.asarray(arr, dtype="<f4")  # tobytes() yields C order for any layout
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<I", d))
            payload = data.tobytes()
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        while True:
            head = fh.read(2)
            if not head:
                break
            (nlen,) = struct.unpack("<H", head)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(4 * count)
            if len(payload) != 4 * count:
                raise ValueError(f"{path}: truncated payload for {name!r}")
            (crc,) = struct.unpack("<I", fh.read(4))
            if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
                raise ValueError(f"{path}: CRC mismatch for {name!r}")
            if name in out:
                raise ValueError(f"{path}: duplicate tensor {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return out


def jsonl_log_writer(fh) -> Callable[[dict], None]:
    def write(record: dict) -> None:
        fh.write(json.dumps(record) + "\n")
        fh.flush()
    return write
