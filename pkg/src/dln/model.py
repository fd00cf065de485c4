"""Two generators that differ only in their layer-norm parameters.

The model owns one ParamStore. Every generator *view* (source, or any
registered target style) pulls the shared LSTM weights, embedding and output
matrices from that store by reference, and only its own ``ln.<domain>.*``
gain/shift vectors. Image and text inputs go through frozen extractors and a
trainable projection into the latent space, whose size equals the embedding
size because the latent code is fed to the decoder as its first input.
"""

from __future__ import annotations

import copy
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from .core import (
    AdamState,
    DimensionError,
    OptimConfig,
    ParamStore,
    StateError,
    Tensor,
    adam_step,
    clip_gradients,
    log_softmax,
    uniform_init,
)
from .data import BOS, PAD, Vocabulary, VocabError
from .lnlstm import GATES, LN_EPS, CellState, LNParams, LSTMWeights, lnlstm_backward, lnlstm_forward

SOURCE = "source"
INIT_RANGE = 0.08


class RegistryError(KeyError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lam: float = 0.5
    lam1: float = 0.2
    lam2: float = 0.1
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.lam1 <= 1.0:
            raise ConfigError(f"lambda1 must lie in [0, 1], got {self.lam1}")
        if self.lam2 < 0:
            raise ConfigError(f"lambda2 must be non-negative, got {self.lam2}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


class TextFeatureExtractor:
    """Frozen featuriser: signed feature hashing of unigram and bigram counts.

    Equivalent to a fixed sparse random projection of the n-gram count vector,
    L2-normalised. Uses crc32 so results do not depend on PYTHONHASHSEED.
    """

    kind = "text-features"

    def __init__(self, dim: int, seed: int):
        self.dim = int(dim)
        self.seed = int(seed)
        self._cache: dict = {}

    def _slot(self, gram: str):
        h = self._cache.get(gram)
        if h is None:
            raw = zlib.crc32(f"{self.seed}\x1f{gram}".encode("utf-8"))
            h = self._cache[gram] = (raw % self.dim, 1.0 if (raw >> 31) & 1 else -1.0)
        return h

    def __call__(self, tokens: Sequence[str]) -> np.ndarray:
        if len(tokens) == 0:
            raise ValueError("cannot featurise an empty sequence")
        f = np.zeros(self.dim)
        grams = list(tokens) + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        for g in grams:
            i, s = self._slot(g)
            f[i] += s
        n = np.linalg.norm(f)
        return f / n if n > 0 else f

    def batch(self, sents) -> np.ndarray:
        return np.stack([self(s) for s in sents])


class ImageFeatureExtractor:
    """Stand-in for a pretrained CNN: validates precomputed feature vectors."""

    kind = "image-features"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def __call__(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[-1] != self.dim:
            raise DimensionError(f"image features have length {raw.shape[-1]}, expected {self.dim}")
        return raw


@dataclass
class StyleEntry:
    vocab: Vocabulary  # base tokens followed by this style's extension tokens
    n_ext: int = 0


@dataclass
class GeneratorView:
    """Shared decoder plus one domain's LN parameters (and style extensions)."""

    domain: str
    weights: LSTMWeights
    ln: LNParams
    embed: list  # [base Tensor] or [base, ext]
    output: list
    vocab: Vocabulary
    eps: float = LN_EPS

    def embed_matrix(self) -> np.ndarray:
        if len(self.embed) == 1:
            return self.embed[0].value
        return np.concatenate([t.value for t in self.embed], axis=0)

    def output_matrix(self) -> np.ndarray:
        if len(self.output) == 1:
            return self.output[0].value
        return np.concatenate([t.value for t in self.output], axis=1)


@dataclass
class SeqCache:
    view: GeneratorView
    traj: object
    hs: np.ndarray
    inputs: np.ndarray  # (T, B) token ids fed at steps 0..T-1
    probs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    emb: np.ndarray
    out: np.ndarray
    batch: int


@dataclass
class LossResult:
    loss: float  # mean over examples of the per-sentence summed cross-entropy
    per_example: np.ndarray
    n_tokens: int
    cache: Optional[SeqCache] = None
    z: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None


def pad_batch(seqs: Sequence[Sequence[int]]):
    T = max(len(s) for s in seqs)
    if T == 0:
        raise ValueError("empty target sequence")
    ids = np.full((len(seqs), T), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), T))
    for b, s in enumerate(seqs):
        ids[b, :len(s)] = s
        mask[b, :len(s)] = 1.0
    return ids, mask


class DLNModel:
    def __init__(self, vocab: Vocabulary, hidden: int, embed: int, f_image: int, f_text: int,
                 max_len: int = 100, text_seed: int = 0, eps: float = LN_EPS,
                 dtype=np.float32):
        self.vocab = vocab
        self.hidden = int(hidden)
        self.embed_dim = int(embed)
        self.f_image = int(f_image)
        self.f_text = int(f_text)
        self.max_len = int(max_len)
        self.eps = eps
        self.dtype = np.dtype(dtype)
        self.text_seed = int(text_seed)
        self.image_extractor = ImageFeatureExtractor(f_image)
        self.text_extractor = TextFeatureExtractor(f_text, text_seed)
        self.store = ParamStore()
        self.styles: "OrderedDict[str, StyleEntry]" = OrderedDict()
        self.anchors: dict[str, np.ndarray] = {}

    # -- construction -------------------------------------------------------

    @classmethod
    def create(cls, vocab: Vocabulary, styles: Sequence[str], hidden: int, embed: int,
               f_image: int, f_text: int, seed: int = 0, max_len: int = 100,
               init_range: float = INIT_RANGE, dtype=np.float32) -> "DLNModel":
        if not styles:
            raise RegistryError("at least one target style is required")
        m = cls(vocab, hidden, embed, f_image, f_text, max_len=max_len, text_seed=seed, dtype=dtype)
        rng = np.random.default_rng(seed)
        V, H, E = len(vocab), m.hidden, m.embed_dim
        add = m.store.add
        add("embed.base", uniform_init((V, E), init_range, rng).astype(dtype))
        add("output.base", uniform_init((H, V), init_range, rng).astype(dtype))
        for k in GATES:
            add(f"lstm.{k}.ie", uniform_init((H, E), init_range, rng).astype(dtype))
            add(f"lstm.{k}.ih", uniform_init((H, H), init_range, rng).astype(dtype))
        add("proj.image", uniform_init((E, f_image), init_range, rng).astype(dtype))
        LNParams.init(H, dtype).register(m.store, SOURCE)
        for s in styles:
            m._add_style(s, vocab, rng, init_range)
        return m

    def _add_style(self, style: str, style_vocab: Vocabulary, rng, init_range: float):
        if style == SOURCE or style in self.styles:
            raise VocabError(f"style id {style!r} is already registered")
        n_ext = len(style_vocab) - len(self.vocab)
        if n_ext < 0 or style_vocab.tokens[:len(self.vocab)] != self.vocab.tokens:
            raise VocabError(f"vocabulary for {style!r} must extend the base vocabulary")
        LNParams.init(self.hidden, self.dtype).register(self.store, style)
        self.store.add(f"proj.text.{style}",
                       uniform_init((self.embed_dim, self.f_text), init_range, rng).astype(self.dtype))
        if n_ext:
            self.store.add(f"embed.ext.{style}",
                           uniform_init((n_ext, self.embed_dim), init_range, rng).astype(self.dtype))
            self.store.add(f"output.ext.{style}",
                           uniform_init((self.hidden, n_ext), init_range, rng).astype(self.dtype))
        self.styles[style] = StyleEntry(style_vocab, n_ext)

    def astype(self, dtype) -> "DLNModel":
        self.dtype = np.dtype(dtype)
        self.store.astype(dtype)
        return self

    # -- views --------------------------------------------------------------

    @property
    def domains(self) -> list[str]:
        return [SOURCE] + list(self.styles)

    def view(self, domain: str) -> GeneratorView:
        if domain == SOURCE:
            vocab, ext = self.vocab, 0
        elif domain in self.styles:
            vocab, ext = self.styles[domain].vocab, self.styles[domain].n_ext
        else:
            raise RegistryError(f"unknown style {domain!r}; registered: {', '.join(self.domains)}")
        st = self.store
        # styles frozen out by a later extension read their own snapshot of the block
        eb = f"embed.own.{domain}" if f"embed.own.{domain}" in st else "embed.base"
        ob = f"output.own.{domain}" if f"output.own.{domain}" in st else "output.base"
        embed = [st[eb]] + ([st[f"embed.ext.{domain}"]] if ext else [])
        output = [st[ob]] + ([st[f"output.ext.{domain}"]] if ext else [])
        return GeneratorView(domain, LSTMWeights.from_store(st), LNParams.from_store(st, domain),
                             embed, output, vocab, self.eps)

    # -- encoders -----------------------------------------------------------

    def encode_image(self, raw_features) -> np.ndarray:
        x = self.image_extractor(raw_features).astype(self.dtype)
        return x @ self.store["proj.image"].value.T

    def text_features(self, sents) -> np.ndarray:
        return self.text_extractor.batch(sents).astype(self.dtype)

    def encode_target(self, tokens: Sequence[str], style: str) -> np.ndarray:
        if len(tokens) == 0:
            raise ValueError("encode_target needs a non-empty sequence")
        if style not in self.styles:
            raise RegistryError(f"unknown style {style!r}")
        x = self.text_extractor(tokens).astype(self.dtype)
        return x @ self.store[f"proj.text.{style}"].value.T

    # -- teacher-forced decoding -------------------------------------------

    def sequence_loss(self, view: GeneratorView, z: np.ndarray, targets: Sequence[Sequence[int]]) -> LossResult:
        """Summed cross-entropy of ``targets`` given latent codes ``z`` (B, E).

        Step -1 consumes z with zero state, step 0 consumes BOS, step k
        consumes the k-th ground-truth token. Logits for position k+1 come from
        the hidden state produced at step k.
        """
        z = np.atleast_2d(z).astype(self.dtype)
        B = z.shape[0]
        if len(targets) != B:
            raise DimensionError(f"{B} latent codes but {len(targets)} target sequences")
        ids, mask = pad_batch(targets)
        V = len(view.vocab)
        if ids.max() >= V:
            raise VocabError(f"target id {int(ids.max())} outside vocabulary of size {V}")
        emb = view.embed_matrix()
        out = view.output_matrix()
        inputs = np.concatenate([np.full((B, 1), BOS, dtype=np.int64), ids[:, :-1]], axis=1).T
        e_seq = np.concatenate([z[None], emb[inputs]], axis=0)
        state0 = CellState.zeros(B, self.hidden, self.dtype)
        hs, _, traj = lnlstm_forward(e_seq, state0, view.weights, view.ln, view.eps)
        logits = hs[1:] @ out  # (T, B, V)
        logp = log_softmax(logits)
        tgt = ids.T
        nll = -np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0] * mask.T
        per_ex = nll.sum(axis=0)
        cache = SeqCache(view, traj, hs, inputs, np.exp(logp), tgt, mask.T, emb, out, B)
        return LossResult(float(per_ex.mean()), per_ex, int(mask.sum()), cache)

    def sequence_backward(self, cache: SeqCache, coef: float) -> np.ndarray:
        """Accumulate coef * d(mean loss) into store grads; returns d/dz."""
        view = cache.view
        scale = coef / cache.batch
        dlogits = cache.probs.copy()
        T, B, V = dlogits.shape
        tb = np.arange(T)[:, None], np.arange(B)[None, :]
        dlogits[tb[0], tb[1], cache.targets] -= 1.0
        dlogits *= (cache.mask * scale)[..., None]
        h = cache.hs[1:]
        dout = h.reshape(-1, self.hidden).T @ dlogits.reshape(-1, V)
        dh = np.zeros_like(cache.hs)
        dh[1:] = dlogits @ cache.out.T
        de, grads, _, _ = lnlstm_backward(cache.traj, dh)
        st = self.store
        for k in GATES:
            st[f"lstm.{k}.ie"].grad += grads[f"lstm.{k}.ie"]
            st[f"lstm.{k}.ih"].grad += grads[f"lstm.{k}.ih"]
            view.ln.g[k].grad += grads[f"{k}.g"]
            view.ln.b[k].grad += grads[f"{k}.b"]
        demb = np.zeros_like(cache.emb)
        np.add.at(demb, cache.inputs.reshape(-1), de[1:].reshape(-1, self.embed_dim))
        nb = view.embed[0].shape[0]
        view.embed[0].grad += demb[:nb]
        view.output[0].grad += dout[:, :nb]
        if len(view.embed) > 1:
            view.embed[1].grad += demb[nb:]
            view.output[1].grad += dout[:, nb:]
        return de[0]

    def _ensure_grads(self):
        for _, t in self.store.items():
            if t.grad is None:
                t.zero_grad()

    def source_loss(self, image_features, targets) -> LossResult:
        x = self.image_extractor(np.atleast_2d(image_features)).astype(self.dtype)
        z = x @ self.store["proj.image"].value.T
        res = self.sequence_loss(self.view(SOURCE), z, targets)
        res.x = x
        return res

    def source_backward(self, res: LossResult, coef: float):
        dz = self.sequence_backward(res.cache, coef)
        self.store["proj.image"].grad += dz.T @ res.x

    def target_loss(self, text_features, targets, style: str) -> LossResult:
        x = np.atleast_2d(text_features).astype(self.dtype)
        if x.shape[1] != self.f_text:
            raise DimensionError(f"text features have length {x.shape[1]}, expected {self.f_text}")
        z = x @ self.store[f"proj.text.{style}"].value.T
        res = self.sequence_loss(self.view(style), z, targets)
        res.x = x
        return res

    def target_backward(self, res: LossResult, coef: float):
        dz = self.sequence_backward(res.cache, coef)
        self.store[f"proj.text.{res.cache.view.domain}"].grad += dz.T @ res.x

    def forward_source(self, image_features, tokens: Sequence[int]) -> float:
        """L_S for one (features, target ids) pair; ids should end with EOS."""
        return self.source_loss(image_features, [list(tokens)]).loss

    def forward_target_reconstruction(self, tokens: Sequence[str], style: str) -> float:
        """L_T for one stylish sentence (strings), reconstructing it from E_T."""
        if not tokens:
            raise ValueError("empty sentence")
        ids = self.styles[style].vocab.encode(tokens, add_eos=True) if style in self.styles else None
        if ids is None:
            raise RegistryError(f"unknown style {style!r}")
        return self.target_loss(self.text_extractor(tokens)[None], [ids], style).loss

    # -- multi-style regulariser -------------------------------------------

    ANCHORED = ("proj.image", "embed.base", "output.base")

    def capture_anchors(self):
        self.anchors = {k: self.store[k].value.astype(np.float64).copy() for k in self.ANCHORED}

    def regularizer(self) -> float:
        """Sum of L2 distances of image projection, embedding and output from anchors.

        Only the pretrained block is compared; extension rows/columns live in
        separate entries and never enter the difference.
        """
        if not self.anchors:
            raise StateError("no anchors captured; call capture_anchors() first")
        total = 0.0
        for k in self.ANCHORED:
            cur = self.store[k].value
            if cur.shape != self.anchors[k].shape:
                raise StateError(f"anchor for {k!r} has shape {self.anchors[k].shape}, current {cur.shape}")
            total += float(np.linalg.norm(cur.astype(np.float64) - self.anchors[k]))
        return total

    def regularizer_backward(self, coef: float):
        for k in self.ANCHORED:
            diff = self.store[k].value.astype(np.float64) - self.anchors[k]
            n = np.linalg.norm(diff)
            if n > 0:
                self.store[k].grad += (coef * diff / n).astype(self.dtype)

    # -- persistence --------------------------------------------------------

    def manifest(self) -> dict:
        m = {
            "format": "dln-model-1",
            "hidden": self.hidden,
            "embed": self.embed_dim,
            "vocab_size": len(self.vocab),
            "f_image": self.f_image,
            "f_text": self.f_text,
            "max_len": self.max_len,
            "ln_eps": repr(self.eps),
            "text_extractor": self.text_extractor.kind,
            "text_seed": self.text_seed,
            "image_extractor": self.image_extractor.kind,
            "vocab": "vocab.txt",
            "styles": ",".join(self.styles),
        }
        for s, entry in self.styles.items():
            m[f"style.{s}.vocab"] = f"vocab_{s}.txt"
            m[f"style.{s}.ext"] = entry.n_ext
            m[f"style.{s}.ln"] = f"ln.{s}.{{i,f,o,u}}.{{g,b}}"
        for k in sorted(self.anchors):
            m[f"anchor.{k}"] = "anchors.ckpt"
        return m

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        checkpoint.save(self.store, out / "model.ckpt")
        self.vocab.save(out / "vocab.txt")
        for s, entry in self.styles.items():
            entry.vocab.save(out / f"vocab_{s}.txt")
        if self.anchors:
            anc = ParamStore()
            for k, v in self.anchors.items():
                anc.add(k, Tensor(v.astype(np.float32)), trainable=False)
            checkpoint.save(anc, out / "anchors.ckpt")
        checkpoint.write_kv(out / "model.manifest", self.manifest())
        return out

    @classmethod
    def load(cls, model_dir, dtype=np.float32) -> "DLNModel":
        d = Path(model_dir)
        man = checkpoint.read_kv(d / "model.manifest")
        vocab = Vocabulary.load(d / man["vocab"])
        m = cls(vocab, int(man["hidden"]), int(man["embed"]), int(man["f_image"]), int(man["f_text"]),
                max_len=int(man["max_len"]), text_seed=int(man["text_seed"]), eps=float(man["ln_eps"]),
                dtype=dtype)
        m.store = checkpoint.load(d / "model.ckpt", dtype=dtype)
        for s in [x for x in man.get("styles", "").split(",") if x]:
            m.styles[s] = StyleEntry(Vocabulary.load(d / man[f"style.{s}.vocab"]), int(man[f"style.{s}.ext"]))
        if (d / "anchors.ckpt").exists():
            anc = checkpoint.load(d / "anchors.ckpt", dtype=np.float64)
            m.anchors = {k: t.value for k, t in anc.items()}
        return m

    def copy(self) -> "DLNModel":
        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class SourceBatch:
    features: np.ndarray  # (B, F_I)
    targets: list  # id lists ending with EOS


@dataclass
class TargetBatch:
    features: np.ndarray  # (B, F_T) frozen text features
    targets: list
    style: str


@dataclass
class Optimizer:
    cfg: OptimConfig = field(default_factory=OptimConfig)
    state: AdamState = field(default_factory=AdamState)
    epoch: int = 0


def joint_train_step(batch_s: SourceBatch, batch_t: TargetBatch, model: DLNModel,
                     cfg: TrainConfig, opt: Optimizer, lam: Optional[float] = None,
                     lam2: float = 0.0, update: bool = True):
    """One step on lam * mean(L_S) + (1 - lam) * mean(L_T) [+ lam2 * R].

    Returns (L_S, L_T, L). With ``update=False`` gradients are left in the
    store and no clipping/Adam step happens (used by the gradient probes).
    """
    lam = cfg.lam if lam is None else lam
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    if not batch_s.targets or not batch_t.targets:
        raise ValueError("both batches must be non-empty")
    model._ensure_grads()
    model.store.zero_grad()
    rs = model.source_loss(batch_s.features, batch_s.targets)
    rt = model.target_loss(batch_t.features, batch_t.targets, batch_t.style)
    total = lam * rs.loss + (1.0 - lam) * rt.loss
    if lam > 0:
        model.source_backward(rs, lam)
    if lam < 1:
        model.target_backward(rt, 1.0 - lam)
    if lam2 > 0:
        total += lam2 * model.regularizer()
        model.regularizer_backward(lam2)
    if update:
        clip_gradients(model.store, opt.cfg.clip_norm)
        adam_step(model.store, opt.state, opt.cfg, opt.epoch)
    return rs.loss, rt.loss, total


def joint_objective(model: DLNModel, batch_s: SourceBatch, batch_t: TargetBatch,
                    lam: float, lam2: float = 0.0) -> float:
    ls = model.source_loss(batch_s.features, batch_s.targets).loss
    lt = model.target_loss(batch_t.features, batch_t.targets, batch_t.style).loss
    total = lam * ls + (1.0 - lam) * lt
    if lam2 > 0:
        total += lam2 * model.regularizer()
    return total


class PreparedData:
    """Encoded source pairs and target sentences, ready for batching."""

    def __init__(self, model: DLNModel, source_examples, target_sents, style: str):
        self.style = style
        self.src_feats = np.stack([np.asarray(ex.features) for ex in source_examples]).astype(model.dtype)
        self.src_ids = [model.vocab.encode(ex.tokens, add_eos=True) for ex in source_examples]
        vocab = model.styles[style].vocab
        self.tgt_feats = model.text_features(target_sents)
        self.tgt_ids = [vocab.encode(s, add_eos=True) for s in target_sents]

    def batches(self, batch_size: int, rng):
        ns, nt = len(self.src_ids), len(self.tgt_ids)
        n = max(ns, nt)
        ps = np.concatenate([rng.permutation(ns) for _ in range(-(-n // ns))])[:n]
        pt = np.concatenate([rng.permutation(nt) for _ in range(-(-n // nt))])[:n]
        for start in range(0, n, batch_size):
            i = ps[start:start + batch_size]
            j = pt[start:start + batch_size]
            yield (SourceBatch(self.src_feats[i], [self.src_ids[k] for k in i]),
                   TargetBatch(self.tgt_feats[j], [self.tgt_ids[k] for k in j], self.style))


def train_epochs(model: DLNModel, data: PreparedData, cfg: TrainConfig, opt: Optimizer,
                 lam: float, lam2: float = 0.0, epochs: Optional[int] = None, log=None,
                 start: int = 0, rng=None):
    """Run ``epochs`` passes; returns per-epoch (epoch, L_S, L_T, L) means.

    Pass the same ``rng`` and an advancing ``start`` to split one run into
    chunks (e.g. to checkpoint in between) without changing the result.
    """
    rng = np.random.default_rng([cfg.seed, 99]) if rng is None else rng
    history = []
    for ep in range(start, start + (cfg.epochs if epochs is None else epochs)):
        opt.epoch = ep
        sums = np.zeros(3)
        nb = 0
        for bs, bt in data.batches(cfg.batch_size, rng):
            sums += joint_train_step(bs, bt, model, cfg, opt, lam=lam, lam2=lam2)
            nb += 1
        row = (ep + 1, *(sums / nb))
        history.append(row)
        if log is not None:
            log(row)
    return history


def extend_to_new_style(model: DLNModel, style: str, corpus, max_vocab: int = 5500,
                        seed: int = 0, init_range: float = INIT_RANGE) -> DLNModel:
    """Register a new target style in place and freeze what must not move.

    Styles registered earlier keep a frozen snapshot of the current embedding
    and output block, so fine-tuning the shared block for the new style does
    not move them. The new style's vocabulary is the base vocabulary followed
    by its most frequent unseen tokens; those get fresh embedding rows /
    output columns. New LN
    parameters start at identity (g=1, b=0) and a new text projection is
    initialised from scratch. Source LN parameters, and every other style's
    private parameters, are frozen. Anchors for the regulariser are captured
    from the current pretrained values.
    """
    from .data import ranked_tokens, token_counts

    if style == SOURCE or style in model.styles:
        raise VocabError(f"style id {style!r} collides with a registered domain")
    for prev in model.styles:
        if f"embed.own.{prev}" not in model.store:
            model.store.add(f"embed.own.{prev}", Tensor(model.store["embed.base"].value.copy()))
            model.store.add(f"output.own.{prev}", Tensor(model.store["output.base"].value.copy()))
    room = max(0, max_vocab - len(model.vocab))
    fresh = [t for t in ranked_tokens(token_counts(corpus)) if t not in model.vocab][:room]
    style_vocab = model.vocab.extended(fresh)
    rng = np.random.default_rng([seed, len(model.styles) + 1])
    model._add_style(style, style_vocab, rng, init_range)
    for name, t in model.store.items():
        t.trainable = not name.startswith(("ln.", "proj.text.", "embed.ext.", "output.ext.",
                                           "embed.own.", "output.own."))
    for name in model.store.names():
        if name.startswith(f"ln.{style}.") or name.endswith(f".{style}"):
            model.store.set_trainable(name, True)
    model.capture_anchors()
    return model
