"""Cross-event attention over the codes of one visit plus its interval token.

Every code present in a visit contributes its embedding as a token, laid out
in a fixed global order (med, diag, lab, proc, ascending code index), followed
by one interval token carrying the embedded gap since the previous visit.
Attention runs over present tokens only; absent vocabulary codes never enter
the key set, so enlarging a vocabulary with unused codes cannot disturb the
result.

Two query regimes exist.  Task-aware attention queries only the tokens of the
prediction target's own event type plus the interval token; task-unaware
attention queries every token.  Keys and values are all present tokens in both
regimes.  Each query's output is its own embedding plus the attention-weighted
sum of all key embeddings, written into a fixed per-code slot of the visit
vector; slots of absent codes stay zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from catnet import autodiff as ad
from catnet.cohort import EVENT_TYPES, VocabSpec

TIME_TOKEN = "time"


@dataclass
class CodeEmbeddings:
    """One learnable embedding table per event type, vocab-size x embed_dim."""

    tables: dict
    embed_dim: int

    @classmethod
    def init(cls, vocab: VocabSpec, embed_dim: int, rng: np.random.Generator):
        tables = {etype: ad.parameter(rng.uniform(-0.1, 0.1, (max(vocab.size(etype), 1), embed_dim)))
                  for etype in EVENT_TYPES}
        return cls(tables=tables, embed_dim=embed_dim)

    def row(self, event_type: str, code: int) -> ad.Tensor:
        return ad.take_row(self.tables[event_type], code)

    def named(self) -> dict:
        return {f"emb_{etype}": self.tables[etype] for etype in EVENT_TYPES}


@dataclass
class VisitTokenSet:
    """Present-code tokens in fixed order, interval token last."""

    tokens: list
    meta: list
    embed_dim: int

    def __post_init__(self):
        if not self.tokens or self.meta[-1][0] != TIME_TOKEN:
            raise ValueError("token set must end with the interval token")

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)


def build_token_set(visit, embeddings: CodeEmbeddings, interval_token: ad.Tensor) -> VisitTokenSet:
    tokens, meta = [], []
    for etype in EVENT_TYPES:
        for code in visit.codes_for(etype):
            tokens.append(embeddings.row(etype, code))
            meta.append((etype, int(code)))
    tokens.append(interval_token)
    meta.append((TIME_TOKEN, 0))
    return VisitTokenSet(tokens=tokens, meta=meta, embed_dim=embeddings.embed_dim)


@dataclass
class AttentionRecord:
    """Attention weights of one visit with query/key identities, for export."""

    weights: np.ndarray
    query_meta: list
    key_meta: list


def _slot_layout(mode: str, primary: str, vocab: VocabSpec):
    """Map token identity -> slot index; returns (mapping, slot count)."""
    if mode == "task-aware":
        slots = {(primary, c): c for c in range(vocab.size(primary))}
        slots[(TIME_TOKEN, 0)] = vocab.size(primary)
        return slots, vocab.size(primary) + 1
    slots = {}
    offset = 0
    for etype in EVENT_TYPES:
        for c in range(vocab.size(etype)):
            slots[(etype, c)] = offset + c
        offset += vocab.size(etype)
    slots[(TIME_TOKEN, 0)] = offset
    return slots, offset + 1


def output_width(mode: str, primary: str, vocab: VocabSpec, embed_dim: int) -> int:
    _, n_slots = _slot_layout(mode, primary, vocab)
    return n_slots * embed_dim


def attend(token_set: VisitTokenSet, mode: str, primary: str = None,
           vocab: VocabSpec = None):
    """Visit vector and attention weights for one visit.

    Returns ``(o_t, record)`` where ``o_t`` is the concatenation of per-slot
    outputs (width ``output_width(...)``) and ``record`` holds the weight
    matrix with query/key metadata.
    """
    if mode not in ("task-aware", "task-unaware"):
        raise ValueError(f"unknown attention mode {mode!r}")
    if mode == "task-aware" and primary not in EVENT_TYPES:
        raise ValueError("task-aware attention requires a primary event type")
    if vocab is None:
        raise ValueError("attend requires the vocabulary for the slot layout")

    n = token_set.embed_dim
    keys = ad.stack(token_set.tokens)
    inv_scale = 1.0 / math.sqrt(n)

    if mode == "task-aware":
        query_ids = [i for i, (etype, _) in enumerate(token_set.meta)
                     if etype in (primary, TIME_TOKEN)]
    else:
        query_ids = list(range(token_set.n_tokens))

    slot_map, n_slots = _slot_layout(mode, primary, vocab)
    zero = ad.tensor(np.zeros(n))
    parts = [zero] * n_slots
    weight_rows = []
    for qi in query_ids:
        q = token_set.tokens[qi]
        logits = ad.scale(ad.matmul(keys, q), inv_scale)
        w = ad.stable_softmax(logits)
        out = ad.add(q, ad.weighted_row_sum(w, keys))
        parts[slot_map[token_set.meta[qi]]] = out
        weight_rows.append(w.data.copy())

    record = AttentionRecord(weights=np.stack(weight_rows),
                             query_meta=[token_set.meta[i] for i in query_ids],
                             key_meta=list(token_set.meta))
    return ad.concat(parts), record


def raw_slot_layout(token_set: VisitTokenSet, mode: str, primary: str,
                    vocab: VocabSpec) -> ad.Tensor:
    """Visit vector with raw embeddings in their slots and no attention.

    This is the drop-in replacement used when cross-event attention is
    ablated; layout and width match :func:`attend` exactly.
    """
    slot_map, n_slots = _slot_layout(mode, primary, vocab)
    zero = ad.tensor(np.zeros(token_set.embed_dim))
    parts = [zero] * n_slots
    for token, m in zip(token_set.tokens, token_set.meta):
        if m in slot_map:
            parts[slot_map[m]] = token
    return ad.concat(parts)


# ---------------------------------------------------------------------------
# weight export
# ---------------------------------------------------------------------------


def export_weights(record: AttentionRecord, vocab: VocabSpec,
                   query_type: str = None, key_type: str = None, top: int = None):
    """Rows of (query name, key name, weight), weight-descending per query."""
    rows = []
    for qrow, (qt, qc) in zip(record.weights, record.query_meta):
        if query_type is not None and qt != query_type:
            continue
        entries = [(float(w), kt, kc) for w, (kt, kc) in zip(qrow, record.key_meta)
                   if key_type is None or kt == key_type]
        entries.sort(key=lambda e: (-e[0], e[1], e[2]))
        if top is not None:
            entries = entries[:top]
        qname = f"{TIME_TOKEN}:0" if qt == TIME_TOKEN else vocab.code_name(qt, qc)
        for w, kt, kc in entries:
            kname = f"{TIME_TOKEN}:0" if kt == TIME_TOKEN else vocab.code_name(kt, kc)
            rows.append((qname, kname, w))
    return rows


class AttentionAverager:
    """Mean attention weight per (query code, key code) pair over many visits."""

    def __init__(self):
        self._sums = {}
        self._counts = {}

    def add(self, record: AttentionRecord):
        for qrow, qmeta in zip(record.weights, record.query_meta):
            for w, kmeta in zip(qrow, record.key_meta):
                pair = (qmeta, kmeta)
                self._sums[pair] = self._sums.get(pair, 0.0) + float(w)
                self._counts[pair] = self._counts.get(pair, 0) + 1

    def mean_weights(self, query_type: str = None, key_type: str = None) -> dict:
        out = {}
        for (qmeta, kmeta), total in self._sums.items():
            if query_type is not None and qmeta[0] != query_type:
                continue
            if key_type is not None and kmeta[0] != key_type:
                continue
            out[(qmeta, kmeta)] = total / self._counts[(qmeta, kmeta)]
        return out
