"""Stage 2: the gated feature-fusion classifier over (disease, context).

The model reads the pair as one character sequence (disease, separator,
context), encodes it, embeds the three 0/1 feature tracks, and fuses the
two streams through a learned gate:

    h2 = relu(W1' h1 + b1)                    per position
    f_t = track-bit embedding lookups         t in {pos, neg, order}
    f1 = relu(sum_t W_t' f_t + b_f)
    h3 = tanh(W_fm' [f1; h2] + b_fm)
    g  = sigmoid(W_g' [f1; h2] + c_g)
    o  = g * h3 + (1 - g) * h2
    c  = [max-pool(o); mean-pool(o)]          over the length axis
    y  = softmax(W_y' c + b_y)

Everything is plain numpy with hand-written backprop, so gradients can be
validated against finite differences and training is deterministic per
seed. The encoder is pluggable; the reference is a trainable character
embedding followed by a symmetric windowed average.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, EmptyPool, ShapeMismatch
from .features import LABELS, ContextSample, FeatureLexicons, assemble_features
from .modelio import load_model, save_model

UNK_ID = 0
SEP_ID = 1


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 5e-5
    max_context: int = 450
    max_disease: int = 30
    focal_gamma: float = 2.0
    epochs: int = 5
    seed: int = 0


class CharVocab:
    """Deterministic character -> id map with reserved UNK and SEP slots."""

    def __init__(self, chars: list[str]):
        self.chars = list(chars)
        self._ids = {ch: i + 2 for i, ch in enumerate(self.chars)}

    @classmethod
    def from_texts(cls, texts) -> "CharVocab":
        seen = set()
        for text in texts:
            seen.update(text)
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.chars) + 2

    def encode(self, text: str) -> np.ndarray:
        return np.array([self._ids.get(ch, UNK_ID) for ch in text], dtype=np.intp)


class CharWindowEncoder:
    """Trainable char embeddings averaged over a symmetric +/-window."""

    def __init__(self, vocab: CharVocab, d_enc: int = 32, window: int = 2, seed: int = 0):
        self.vocab = vocab
        self.d_enc = d_enc
        self.window = window
        rng = np.random.default_rng(seed)
        self.embedding = rng.normal(0.0, 0.1, size=(len(vocab), d_enc))

    def _bounds(self, length: int):
        idx = np.arange(length)
        lo = np.maximum(0, idx - self.window)
        hi = np.minimum(length, idx + self.window + 1)
        return lo, hi

    def encode(self, ids: np.ndarray) -> np.ndarray:
        rows = self.embedding[ids]
        lo, hi = self._bounds(len(ids))
        csum = np.vstack([np.zeros((1, self.d_enc)), np.cumsum(rows, axis=0)])
        return (csum[hi] - csum[lo]) / (hi - lo)[:, None]

    def backward(self, ids: np.ndarray, d_h1: np.ndarray) -> dict[str, np.ndarray]:
        lo, hi = self._bounds(len(ids))
        scaled = d_h1 / (hi - lo)[:, None]
        csum = np.vstack([np.zeros((1, self.d_enc)), np.cumsum(scaled, axis=0)])
        d_rows = csum[hi] - csum[lo]  # window membership is symmetric
        d_emb = np.zeros_like(self.embedding)
        np.add.at(d_emb, ids, d_rows)
        return {"embedding": d_emb}

    def params(self) -> dict[str, np.ndarray]:
        return {"embedding": self.embedding}


class GatedFusionHead:
    """Parameters and forward/backward of the fusion-and-classify stack."""

    def __init__(self, d_enc: int, d: int = 32, d_f: int | None = None,
                 n_classes: int = 3, seed: int = 0):
        if d_f is None:
            d_f = d
        self.d_enc, self.d, self.d_f, self.n_classes = d_enc, d, d_f, n_classes
        rng = np.random.default_rng(seed)

        def mat(*shape):
            return rng.normal(0.0, 0.1, size=shape)

        self.p = {
            "W1": mat(d_enc, d), "b1": np.zeros(d),
            "e_pos": mat(2, d_f), "e_neg": mat(2, d_f), "e_order": mat(2, d_f),
            "W_pos": mat(d_f, d), "W_neg": mat(d_f, d), "W_order": mat(d_f, d),
            "b_f": np.zeros(d),
            "W_fm": mat(2 * d, d), "b_fm": np.zeros(d),
            "W_g": mat(2 * d, d), "c_g": np.zeros(d),
            "W_y": mat(2 * d, n_classes), "b_y": np.zeros(n_classes),
        }

    def forward(self, h1: np.ndarray, tracks: tuple[np.ndarray, np.ndarray, np.ndarray],
                return_cache: bool = False):
        p = self.p
        length = h1.shape[0]
        if h1.shape[1] != self.d_enc:
            raise ShapeMismatch(f"encoder width {h1.shape[1]} != head d_enc {self.d_enc}")
        pos, neg, order = tracks
        if any(len(t) != length for t in tracks):
            raise ShapeMismatch("feature tracks are not aligned with the encoding")

        u1 = h1 @ p["W1"] + p["b1"]
        h2 = np.maximum(u1, 0.0)
        f_pos, f_neg, f_order = p["e_pos"][pos], p["e_neg"][neg], p["e_order"][order]
        uf = f_pos @ p["W_pos"] + f_neg @ p["W_neg"] + f_order @ p["W_order"] + p["b_f"]
        f1 = np.maximum(uf, 0.0)
        z = np.concatenate([f1, h2], axis=1)
        u3 = z @ p["W_fm"] + p["b_fm"]
        h3 = np.tanh(u3)
        g = 1.0 / (1.0 + np.exp(-(z @ p["W_g"] + p["c_g"])))
        o = g * h3 + (1.0 - g) * h2
        imax = np.argmax(o, axis=0)
        cvec = np.concatenate([o[imax, np.arange(self.d)], o.mean(axis=0)])
        scores = cvec @ p["W_y"] + p["b_y"]
        shifted = scores - scores.max()
        exp = np.exp(shifted)
        probs = exp / exp.sum()
        if not return_cache:
            return probs
        cache = {"h1": h1, "u1": u1, "h2": h2, "f_pos": f_pos, "f_neg": f_neg,
                 "f_order": f_order, "uf": uf, "f1": f1, "z": z, "h3": h3, "g": g,
                 "o": o, "imax": imax, "cvec": cvec, "probs": probs,
                 "tracks": (pos, neg, order), "length": length}
        return probs, cache

    def backward(self, cache: dict, d_scores: np.ndarray):
        """Gradients for every head parameter plus d(h1)."""
        p = self.p
        d = self.d
        length = cache["length"]
        pos, neg, order = cache["tracks"]
        grads = {name: np.zeros_like(arr) for name, arr in self.p.items()}

        grads["W_y"] = np.outer(cache["cvec"], d_scores)
        grads["b_y"] = d_scores
        d_cvec = p["W_y"] @ d_scores
        d_o = np.tile(d_cvec[d:] / length, (length, 1))
        d_o[cache["imax"], np.arange(d)] += d_cvec[:d]

        h2, h3, g = cache["h2"], cache["h3"], cache["g"]
        d_g = d_o * (h3 - h2)
        d_h3 = d_o * g
        d_h2 = d_o * (1.0 - g)

        d_u3 = d_h3 * (1.0 - h3 * h3)
        grads["W_fm"] = cache["z"].T @ d_u3
        grads["b_fm"] = d_u3.sum(axis=0)
        d_z = d_u3 @ p["W_fm"].T

        d_ug = d_g * g * (1.0 - g)
        grads["W_g"] = cache["z"].T @ d_ug
        grads["c_g"] = d_ug.sum(axis=0)
        d_z += d_ug @ p["W_g"].T

        d_f1 = d_z[:, :d]
        d_h2 += d_z[:, d:]

        d_uf = d_f1 * (cache["uf"] > 0.0)
        grads["b_f"] = d_uf.sum(axis=0)
        for name, feats, bits in (("pos", cache["f_pos"], pos),
                                  ("neg", cache["f_neg"], neg),
                                  ("order", cache["f_order"], order)):
            grads[f"W_{name}"] = feats.T @ d_uf
            d_feat = d_uf @ p[f"W_{name}"].T
            table = grads[f"e_{name}"]
            np.add.at(table, bits, d_feat)

        d_u1 = d_h2 * (cache["u1"] > 0.0)
        grads["W1"] = cache["h1"].T @ d_u1
        grads["b1"] = d_u1.sum(axis=0)
        d_h1 = d_u1 @ p["W1"].T
        return grads, d_h1


def focal_loss(probs: np.ndarray, label_index: int, gamma: float) -> float:
    """-(1 - p)^gamma * log(p) with p clamped at 1e-12."""
    p = max(float(probs[label_index]), 1e-12)
    return -((1.0 - p) ** gamma) * math.log(p)


def _focal_score_grad(probs: np.ndarray, label_index: int, gamma: float) -> np.ndarray:
    p = min(max(float(probs[label_index]), 1e-12), 1.0 - 1e-12)
    if gamma == 0.0:
        dldp = -1.0 / p
    else:
        one_minus = 1.0 - p
        dldp = gamma * one_minus ** (gamma - 1.0) * math.log(p) - one_minus ** gamma / p
    onehot = np.zeros(len(probs))
    onehot[label_index] = 1.0
    return dldp * probs[label_index] * (onehot - probs)


# ---------------------------------------------------------------------------
# Data augmentation
# ---------------------------------------------------------------------------


def augment_eda(sample: ContextSample, lexicons: FeatureLexicons, seed: int,
                swap_rate: float = 0.05, deletion_rate: float = 0.1,
                **assemble_kwargs) -> list[ContextSample]:
    """Two perturbed copies: one character-swap variant, one deletion variant.

    Characters inside disease occurrences are protected: never swapped,
    never deleted. Tracks are recomputed on the perturbed context and the
    label is preserved.
    """
    rng = random.Random(seed)
    context = sample.context
    protected = sample.pos_track.astype(bool)
    free = [i for i in range(len(context)) if not protected[i]]

    chars = list(context)
    if len(free) >= 2:
        for _ in range(math.ceil(swap_rate * len(context))):
            i, j = rng.sample(free, 2)
            chars[i], chars[j] = chars[j], chars[i]
    swapped = "".join(chars)

    kept = [ch for i, ch in enumerate(context)
            if protected[i] or rng.random() >= deletion_rate]
    deleted = "".join(kept)

    return [
        assemble_features(sample.disease, text, lexicons, label=sample.label,
                          **assemble_kwargs)
        for text in (swapped, deleted)
    ]


def augment_disease_replace(sample: ContextSample, disease_pool, exclusion,
                            lexicons: FeatureLexicons, seed: int, n: int = 3,
                            **assemble_kwargs) -> list[ContextSample]:
    """n copies with the disease swapped for another, at every occurrence.

    Replacements are drawn from the pool minus the exclusion list (chronic
    diseases that would falsify the label) minus the original disease.
    """
    excluded = set(exclusion.entries) | {sample.disease}
    candidates = [d for d in disease_pool.entries if d not in excluded]
    if not candidates:
        raise EmptyPool("no replacement diseases remain after exclusions")
    rng = random.Random(seed)
    variants = []
    for _ in range(n):
        replacement = candidates[rng.randrange(len(candidates))]
        new_context = sample.context.replace(sample.disease, replacement)
        variants.append(
            assemble_features(replacement, new_context, lexicons,
                              label=sample.label, **assemble_kwargs)
        )
    return variants


# ---------------------------------------------------------------------------
# The trained classifier
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    loss: float
    dev_accuracy: float


class ContextClassifier:
    """Encoder + fusion head with predict/save/load and training support."""

    def __init__(self, encoder: CharWindowEncoder, head: GatedFusionHead,
                 config: TrainConfig):
        self.encoder = encoder
        self.head = head
        self.config = config

    # -- input assembly ---------------------------------------------------

    def _inputs(self, sample: ContextSample):
        disease = sample.disease[: self.config.max_disease]
        context = sample.context[: self.config.max_context]
        ids = np.concatenate([
            self.encoder.vocab.encode(disease),
            np.array([SEP_ID], dtype=np.intp),
            self.encoder.vocab.encode(context),
        ])
        prefix = len(disease) + 1

        def extend(track, prefix_bit):
            return np.concatenate([
                np.full(len(disease), prefix_bit, dtype=np.intp),
                np.zeros(1, dtype=np.intp),
                np.asarray(track[: len(context)], dtype=np.intp),
            ])

        tracks = (extend(sample.pos_track, 1),
                  extend(sample.neg_track, 0),
                  extend(sample.order_track, 0))
        return ids, tracks, prefix

    # -- inference ----------------------------------------------------------

    def forward(self, sample: ContextSample, return_cache: bool = False):
        ids, tracks, _ = self._inputs(sample)
        h1 = self.encoder.encode(ids)
        if return_cache:
            probs, cache = self.head.forward(h1, tracks, return_cache=True)
            cache["ids"] = ids
            return probs, cache
        return self.head.forward(h1, tracks)

    def predict_proba(self, sample: ContextSample) -> np.ndarray:
        return self.forward(sample)

    def predict(self, sample: ContextSample) -> tuple[str, float]:
        probs = self.forward(sample)
        idx = int(np.argmax(probs))
        return LABELS[idx], float(probs[idx])

    def classify(self, sample: ContextSample, record_id: str | None = None):
        """Pipeline-facing entry point; record_id is accepted and ignored."""
        return self.predict(sample)

    # -- training -----------------------------------------------------------

    def loss_and_grads(self, sample: ContextSample, label_index: int):
        probs, cache = self.forward(sample, return_cache=True)
        loss = focal_loss(probs, label_index, self.config.focal_gamma)
        d_scores = _focal_score_grad(probs, label_index, self.config.focal_gamma)
        head_grads, d_h1 = self.head.backward(cache, d_scores)
        enc_grads = self.encoder.backward(cache["ids"], d_h1)
        return loss, head_grads, enc_grads

    def mean_loss(self, samples, label_indices) -> float:
        total = 0.0
        for sample, label in zip(samples, label_indices):
            total += focal_loss(self.forward(sample), label, self.config.focal_gamma)
        return total / len(samples)

    def accuracy(self, samples, label_indices) -> float:
        hits = 0
        for sample, label in zip(samples, label_indices):
            if int(np.argmax(self.forward(sample))) == label:
                hits += 1
        return hits / len(samples)

    def named_params(self):
        for name, arr in self.head.p.items():
            yield f"head.{name}", arr
        yield "encoder.embedding", self.encoder.embedding

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "vocab": "".join(self.encoder.vocab.chars),
            "d_enc": self.encoder.d_enc,
            "window": self.encoder.window,
            "d": self.head.d,
            "d_f": self.head.d_f,
            "n_classes": self.head.n_classes,
            "labels": list(LABELS),
            "config": {
                "batch_size": self.config.batch_size,
                "learning_rate": self.config.learning_rate,
                "max_context": self.config.max_context,
                "max_disease": self.config.max_disease,
                "focal_gamma": self.config.focal_gamma,
                "epochs": self.config.epochs,
                "seed": self.config.seed,
            },
        }
        arrays = {f"head.{k}": v for k, v in self.head.p.items()}
        arrays["encoder.embedding"] = self.encoder.embedding
        save_model(path, "context", meta, arrays)

    @classmethod
    def load(cls, path) -> "ContextClassifier":
        kind, meta, arrays = load_model(path)
        if kind != "context":
            raise ValueError(f"{path}: expected a context model, got {kind!r}")
        vocab = CharVocab(list(meta["vocab"]))
        encoder = CharWindowEncoder(vocab, d_enc=meta["d_enc"], window=meta["window"])
        encoder.embedding = arrays["encoder.embedding"]
        head = GatedFusionHead(d_enc=meta["d_enc"], d=meta["d"], d_f=meta["d_f"],
                               n_classes=meta["n_classes"])
        for key in head.p:
            head.p[key] = arrays[f"head.{key}"]
        config = TrainConfig(**meta["config"])
        return cls(encoder, head, config)


def train(samples: list[ContextSample], config: TrainConfig,
          encoder: CharWindowEncoder | None = None,
          dev_samples: list[ContextSample] | None = None,
          d: int = 32, d_enc: int = 32,
          ) -> tuple[ContextClassifier, list[EpochStats]]:
    """Minimize mean focal loss with plain SGD; deterministic per seed.

    Per-epoch loss is the full-training-set loss measured after the
    epoch's updates; dev accuracy falls back to training accuracy when no
    dev split is given.
    """
    labels = [s.label for s in samples]
    if any(lbl is None for lbl in labels):
        raise DegenerateData("every training sample needs a label")
    present = set(labels)
    missing = [lbl for lbl in LABELS if lbl not in present]
    if missing:
        raise DegenerateData(f"classes absent from training data: {missing}")

    if encoder is None:
        texts = [s.disease for s in samples] + [s.context for s in samples]
        if dev_samples:
            texts += [s.disease for s in dev_samples] + [s.context for s in dev_samples]
        vocab = CharVocab.from_texts(texts)
        encoder = CharWindowEncoder(vocab, d_enc=d_enc, seed=config.seed)
    head = GatedFusionHead(d_enc=encoder.d_enc, d=d, seed=config.seed + 1)
    model = ContextClassifier(encoder, head, config)

    label_indices = [LABELS.index(lbl) for lbl in labels]
    eval_samples = dev_samples if dev_samples else samples
    eval_labels = [LABELS.index(s.label) for s in eval_samples]

    rng = random.Random(config.seed)
    order = list(range(len(samples)))
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        rng.shuffle(order)
        for batch_start in range(0, len(order), config.batch_size):
            batch = order[batch_start : batch_start + config.batch_size]
            head_acc = {k: np.zeros_like(v) for k, v in head.p.items()}
            emb_acc = np.zeros_like(encoder.embedding)
            for idx in batch:
                _, head_grads, enc_grads = model.loss_and_grads(
                    samples[idx], label_indices[idx])
                for key, grad in head_grads.items():
                    head_acc[key] += grad
                emb_acc += enc_grads["embedding"]
            scale = config.learning_rate / len(batch)
            for key in head.p:
                head.p[key] -= scale * head_acc[key]
            encoder.embedding -= scale * emb_acc
        history.append(EpochStats(
            epoch=epoch,
            loss=model.mean_loss(samples, label_indices),
            dev_accuracy=model.accuracy(eval_samples, eval_labels),
        ))
    return model, history


def load_training_samples(path, lexicons: FeatureLexicons,
                          **assemble_kwargs) -> list[ContextSample]:
    """Read JSON-per-line {disease, context, label} training samples."""
    import json

    samples = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            samples.append(assemble_features(
                obj["disease"], obj["context"], lexicons,
                label=obj.get("label"), **assemble_kwargs))
    return samples
