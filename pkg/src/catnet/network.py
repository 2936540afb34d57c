"""The composed prediction network and its per-instance forward pass.

One instance is a patient's input visits plus a target vector.  Each visit is
embedded into tokens (present codes plus the interval token), mixed by
cross-event attention into a fixed-layout visit vector, encoded by the
recurrent backbone, aggregated through visit-level attention and the global
time gate, and mapped to per-target probabilities.

Ablation variants substitute documented replacements for single components:
without cross-event attention the visit vector holds raw embeddings in the
same slot layout; without visit attention each context is the hidden state
itself; without the global gate that route contributes nothing; without the
interval signal a learned constant token stands in for every gap; dropped
event types are removed from every visit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from catnet import autodiff as ad
from catnet.aggregate import HeadParams, fuse_and_predict, global_time_gate, visit_self_attention
from catnet.attention import CodeEmbeddings, attend, build_token_set, output_width, raw_slot_layout
from catnet.backbone import RecurrentParams, SequenceBatch, run_sequence
from catnet.cohort import EVENT_TYPES, TaskSpec, Visit, VocabSpec, extract_task_instances
from catnet.time_kernel import TimeKernelParams, time_embed

COMPONENT_DROPS = ("cross", "visit", "global")
EVENT_DROPS = ("diag", "lab", "proc", "time", "aux")
DEMO_DIM_IN = 3


def resolve_drops(names, task: str):
    """Validate ablation drop names against the task's primary type."""
    seen = []
    for name in names:
        if name not in COMPONENT_DROPS + EVENT_DROPS:
            raise ValueError(f"unknown ablation drop {name!r}; expected one of "
                             f"{COMPONENT_DROPS + EVENT_DROPS}")
        if name == task:
            raise ValueError(f"cannot drop the task's own event type {name!r}")
        if name not in seen:
            seen.append(name)
    return tuple(seen)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture-defining settings; everything a model file must restore."""

    task: str = "med"
    mode: str = "task-aware"
    backbone: str = "gru"
    embed_dim: int = 16
    kernel_dim: int = 16
    hidden_dim: int = 64
    demo_dim: int = 8
    time_scale: float = 30.0
    drops: tuple = ()

    def __post_init__(self):
        TaskSpec(self.task, self.mode)  # validates task/mode pairing
        if self.backbone not in ("gru", "lstm"):
            raise ValueError(f"unsupported backbone {self.backbone!r}; expected gru or lstm")
        object.__setattr__(self, "drops", resolve_drops(self.drops, self.task))

    @property
    def task_spec(self) -> TaskSpec:
        return TaskSpec(self.task, self.mode)

    def dropped_types(self):
        dropped = set(t for t in self.drops if t in EVENT_TYPES)
        if "aux" in self.drops:
            dropped.update(t for t in EVENT_TYPES if t != self.task)
        return dropped

    def to_dict(self) -> dict:
        return {"task": self.task, "mode": self.mode, "backbone": self.backbone,
                "embed_dim": self.embed_dim, "kernel_dim": self.kernel_dim,
                "hidden_dim": self.hidden_dim, "demo_dim": self.demo_dim,
                "time_scale": self.time_scale, "drops": list(self.drops)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["drops"] = tuple(d.get("drops", ()))
        return cls(**d)

    def with_drops(self, names) -> "ModelConfig":
        return replace(self, drops=tuple(names))


@dataclass
class TaskInstance:
    """Model-ready view of one patient for one task."""

    patient_id: str
    visits: list
    delta_prev: np.ndarray
    delta_global: np.ndarray
    demo: np.ndarray
    target: np.ndarray


def build_instances(records, task: TaskSpec, vocab: VocabSpec):
    """Turn records into task instances with backward-anchored interval views."""
    instances = []
    for rec in records:
        visits, target = extract_task_instances(rec, task, vocab)
        times = np.array([v.time_days for v in visits], dtype=np.float64)
        instances.append(TaskInstance(
            patient_id=rec.patient_id,
            visits=list(visits),
            delta_prev=np.diff(times, prepend=times[0]),
            delta_global=times - times[0],
            demo=rec.demographics_vector(),
            target=np.asarray(target, dtype=np.float64),
        ))
    return instances


class CatnetModel:
    """All learnable parameters plus the forward pass over one instance."""

    def __init__(self, config: ModelConfig, vocab: VocabSpec, rng: np.random.Generator = None):
        self.config = config
        self.vocab = vocab
        self.n_targets = config.task_spec.target_dim(vocab)
        self.input_width = output_width(config.mode, config.task, vocab, config.embed_dim)
        if rng is None:
            rng = np.random.default_rng(0)
        self.embeddings = CodeEmbeddings.init(vocab, config.embed_dim, rng)
        self.interval_kernel = TimeKernelParams.init(config.kernel_dim, config.embed_dim, rng)
        self.decay_kernel = TimeKernelParams.init(config.hidden_dim, config.hidden_dim, rng)
        self.rnn = RecurrentParams.init(config.backbone, self.input_width,
                                        config.hidden_dim, rng)
        self.head = HeadParams.init(DEMO_DIM_IN, config.demo_dim, config.hidden_dim,
                                    self.n_targets, rng)
        self.constant_interval = (
            ad.parameter(rng.uniform(-0.1, 0.1, config.embed_dim))
            if "time" in config.drops else None)

    def parameters(self) -> dict:
        named = {}
        named.update(self.embeddings.named())
        named.update(self.interval_kernel.named("dt"))
        named.update(self.decay_kernel.named("gt"))
        named.update(self.rnn.named("rnn"))
        named.update(self.head.named())
        if self.constant_interval is not None:
            named["const_interval"] = self.constant_interval
        return dict(sorted(named.items()))

    def _visible_visit(self, visit: Visit) -> Visit:
        dropped = self.config.dropped_types()
        if not dropped:
            return visit
        return Visit(time_days=visit.time_days,
                     codes={t: ([] if t in dropped else visit.codes_for(t))
                            for t in EVENT_TYPES})

    def _interval_token(self, delta_days: float) -> ad.Tensor:
        if self.constant_interval is not None:
            return self.constant_interval
        return time_embed(delta_days / self.config.time_scale, self.interval_kernel)

    def forward_instance(self, instance: TaskInstance, train: bool = False,
                         dropout: float = 0.0, rng: np.random.Generator = None,
                         collect_attention: bool = False):
        """Probabilities for one instance; optionally the attention records."""
        cfg = self.config
        visit_vectors = []
        records = [] if collect_attention else None
        for visit, delta in zip(instance.visits, instance.delta_prev):
            tokens = build_token_set(self._visible_visit(visit), self.embeddings,
                                     self._interval_token(float(delta)))
            if "cross" in cfg.drops:
                o_t = raw_slot_layout(tokens, cfg.mode, cfg.task, self.vocab)
            else:
                o_t, record = attend(tokens, cfg.mode, primary=cfg.task, vocab=self.vocab)
                if records is not None:
                    records.append(record)
            if train and dropout > 0.0:
                keep = 1.0 - dropout
                mask = (rng.random(self.input_width) < keep) / keep
                o_t = ad.mul(o_t, ad.tensor(mask))
            visit_vectors.append(o_t)

        states = run_sequence(SequenceBatch([visit_vectors]), self.rnn).sequences[0]
        if "visit" in cfg.drops:
            contexts = list(states)
        else:
            contexts, _ = visit_self_attention(states)
        if "global" in cfg.drops:
            gated = None
        else:
            gated, _ = global_time_gate(
                states, instance.delta_global / cfg.time_scale, self.decay_kernel)
        probs = fuse_and_predict(contexts, gated, instance.demo, self.head)
        return (probs, records) if collect_attention else probs

    def batch_loss(self, instances, train: bool = False, dropout: float = 0.0,
                   rng: np.random.Generator = None) -> ad.Tensor:
        """Mean per-instance binary cross-entropy over a batch."""
        total = None
        for inst in instances:
            probs = self.forward_instance(inst, train=train, dropout=dropout, rng=rng)
            loss = ad.binary_cross_entropy(probs, inst.target)
            total = loss if total is None else ad.add(total, loss)
        return ad.scale(total, 1.0 / len(instances))

    def predict(self, instances) -> np.ndarray:
        """Evaluation-mode probabilities, one row per instance."""
        return np.stack([self.forward_instance(inst).data for inst in instances])

    def state_arrays(self) -> dict:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_state_arrays(self, state: dict):
        params = self.parameters()
        missing = set(params) ^ set(state)
        if missing:
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {t.data.shape}")
            t.data[...] = arr
