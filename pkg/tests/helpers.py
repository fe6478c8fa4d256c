"""Shared builders for the toy pipelines used across the test suite."""

import json
import os

import numpy as np

from e2el import scoring
from e2el.candidates import AliasIndex, build_index, CandidateEntry
from e2el.corpus import Document, write_corpus_jsonl
from e2el.embeddings import CharTable, EntityVectors, WordVectors, save_text_embeddings
from e2el.encoder import EncoderDims
from e2el.model import LinkingModel


def toy_dims(entity_dim=16, dropout_keep=1.0, **kw):
    defaults = dict(word_dim=16, char_dim=4, char_hidden=4, ctx_hidden=8,
                    entity_dim=entity_dim, dropout_keep=dropout_keep)
    defaults.update(kw)
    return EncoderDims(**defaults)


def word_store(tokens, dim=16, seed=100, vectors=None):
    rng = np.random.default_rng(seed)
    vocab = {t: i for i, t in enumerate(tokens)}
    if vectors is None:
        matrix = rng.standard_normal((len(tokens) + 1, dim)).astype(np.float32)
        matrix[-1] = 0.0  # unknown row
    else:
        matrix = np.vstack([vectors, np.zeros((1, dim), dtype=np.float32)])
    return WordVectors(vocab=vocab, matrix=matrix.astype(np.float32),
                       unk_index=len(tokens))


def entity_store(entity_ids, dim=16, seed=200, vectors=None):
    if vectors is None:
        rng = np.random.default_rng(seed)
        vectors = rng.standard_normal((len(entity_ids), dim))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    ids = {e: i for i, e in enumerate(entity_ids)}
    return EntityVectors(ids=ids, matrix=np.asarray(vectors, dtype=np.float32))


def alias_index(table, s=30, l_max=6):
    """table: surface -> list of (entity_id, prior)."""
    entries = {
        surface: sorted((CandidateEntry(e, p) for e, p in cands),
                        key=lambda c: (-c.prior, c.entity_id))[:s]
        for surface, cands in table.items()
    }
    return AliasIndex(entries, s=s, max_span_length=l_max)


def build_model(words, entities, dims=None, corpus_tokens=None, seed=0, **kw):
    dims = dims or toy_dims(entity_dim=entities.dim)
    tokens = corpus_tokens if corpus_tokens is not None else list(words.vocab)
    chars = CharTable.build(tokens, dims.char_dim, np.random.default_rng([seed, 99]))
    return LinkingModel(dims=dims, words=words, chars=chars, entities=entities,
                        seed=seed, **kw)


# ---------------------------------------------------------------------------
# synthetic corpora


def overfit_corpus(n_surfaces=12, candidates_per_surface=3, n_docs=24, seed=0):
    """Ambiguous surfaces whose gold entity is identified by an adjacent
    companion token; gold is always in the candidate set.

    Returns (docs, index_table, word_tokens, entity_ids).
    """
    rng = np.random.default_rng(seed)
    surfaces = [f"surf{i}" for i in range(n_surfaces)]
    entities = {s: [f"ENT_{s}_{j}" for j in range(candidates_per_surface)]
                for s in surfaces}
    entity_ids = [e for s in surfaces for e in entities[s]]
    companions = {e: f"cue_{e}" for e in entity_ids}
    index_table = {
        s: [(e, p) for e, p in zip(entities[s], (0.5, 0.3, 0.2))]
        for s in surfaces
    }
    # a linkable surface that is never a gold mention, so all-spans training
    # must learn to suppress it
    index_table["lure"] = [("ENT_lure_0", 0.7), ("ENT_lure_1", 0.3)]
    entity_ids = entity_ids + ["ENT_lure_0", "ENT_lure_1"]
    fillers = ["the", "report", "said", "today"]
    combos = [(s, e) for s in surfaces for e in entities[s]]
    docs = []
    k = 0
    for d in range(n_docs):
        tokens, gold = [], []
        for _ in range(2):
            s, e = combos[k % len(combos)]
            k += 1
            tokens.append(fillers[int(rng.integers(0, len(fillers)))])
            tokens.append(companions[e])
            gold.append((len(tokens), len(tokens), e))
            tokens.append(s)
        if d % 2 == 0:
            tokens.append("lure")
        tokens.append(fillers[int(rng.integers(0, len(fillers)))])
        docs.append(Document(f"doc{d}", tokens, gold))
    word_tokens = surfaces + list(companions.values()) + fillers + ["lure"]
    return docs, index_table, word_tokens, entity_ids


def coherence_corpus(n_topics=4, n_train=60, n_dev=30, n_test=30, seed=0):
    """Corpus where an ambiguous mention is decidable only through the
    co-occurring unambiguous entity.

    Anchor mentions use single-use random surface strings that are absent
    from the word vectors (so text carries no transferable signal about the
    topic), each mapping to exactly one anchor entity in the alias index.
    Topic entity vectors pair with anchor vectors by construction, so only
    the voting layer can generalize the ambiguous mention's gold entity.

    Returns (train, dev, test, index_table, word_tokens, entity_store).
    """
    rng = np.random.default_rng(seed)
    dim = 16
    anchors = [f"U{i}" for i in range(n_topics)]
    topics = [f"A{i}" for i in range(n_topics)]
    # orthonormal frame: shared direction c plus one direction per topic
    basis = np.linalg.qr(rng.standard_normal((dim, dim)))[0]
    c = basis[:, 0]
    vectors = {}
    for i in range(n_topics):
        d_i = basis[:, i + 1]
        vectors[anchors[i]] = (c + 2.0 * d_i) / np.sqrt(5.0)
        vectors[topics[i]] = d_i
    ents = entity_store(anchors + topics, dim=dim,
                        vectors=np.stack([vectors[e] for e in anchors + topics]))

    fillers = ["begin", "filler", "stop"]
    index_table = {"amb": [(t, 1.0 / n_topics) for t in topics]}
    letters = "abcdefghijklmnopqrstuvwxyz"

    def make_split(n, tag):
        docs = []
        for d in range(n):
            i = int(rng.integers(0, n_topics))
            surface = "anch" + "".join(letters[j] for j in rng.integers(0, 26, size=8))
            index_table[surface] = [(anchors[i], 1.0)]
            tokens = [fillers[0], surface, fillers[1], "amb", fillers[2]]
            gold = [(1, 1, anchors[i]), (3, 3, topics[i])]
            docs.append(Document(f"{tag}{d}", tokens, gold))
        return docs

    train = make_split(n_train, "tr")
    dev = make_split(n_dev, "dv")
    test = make_split(n_test, "te")
    word_tokens = fillers + ["amb"]  # anchor surfaces stay out of the vocabulary
    return train, dev, test, index_table, word_tokens, ents


# ---------------------------------------------------------------------------
# on-disk fixture for the CLI pipeline


def write_pipeline_fixture(dir_path, seed=0, n_docs=24, max_steps=600,
                           eval_every=200, learning_rate=0.01):
    """Write corpus, embeddings, counts and config files for a full run.

    Returns a dict of paths plus the in-memory documents.
    """
    dir_path = str(dir_path)
    docs, index_table, word_tokens, entity_ids = overfit_corpus(n_docs=n_docs, seed=seed)
    dim = 16
    rng = np.random.default_rng([seed, 7])

    paths = {name: os.path.join(dir_path, fname) for name, fname in (
        ("words", "words.txt"), ("entities", "entities.txt"),
        ("counts", "counts.tsv"), ("corpus", "corpus.jsonl"),
        ("index", "index.bin"), ("checkpoint", "model.ckpt"),
        ("config", "config.json"), ("log", "train.log.jsonl"),
        ("annotations", "annotations.jsonl"),
    )}

    vocab = {t: i for i, t in enumerate(word_tokens)}
    matrix = rng.standard_normal((len(word_tokens), dim)).astype(np.float32)
    save_text_embeddings(vocab, matrix, paths["words"])

    evecs = rng.standard_normal((len(entity_ids), dim)).astype(np.float32)
    evecs /= np.linalg.norm(evecs, axis=1, keepdims=True)
    save_text_embeddings({e: i for i, e in enumerate(entity_ids)}, evecs, paths["entities"])

    with open(paths["counts"], "w", encoding="utf-8") as fh:
        for surface, cands in index_table.items():
            for entity, prior in cands:
                fh.write(f"{surface}\t{entity}\t{int(round(prior * 10))}\n")

    write_corpus_jsonl(docs, paths["corpus"])

    config = {
        "seed": seed,
        "paths.word_embeddings": paths["words"],
        "paths.entity_embeddings": paths["entities"],
        "paths.candidate_index": paths["index"],
        "paths.train_corpus": paths["corpus"],
        "paths.dev_corpus": paths["corpus"],
        "paths.checkpoint": paths["checkpoint"],
        "paths.train_log": paths["log"],
        "dims.word": dim, "dims.char": 4, "dims.char_hidden": 4,
        "dims.ctx_hidden": 8, "dims.entity": dim,
        "encoder.dropout_keep": 1.0,
        "train.learning_rate": learning_rate,
        "train.eval_every": eval_every,
        "train.max_steps": max_steps,
    }
    with open(paths["config"], "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
    return paths, docs
