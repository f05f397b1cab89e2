"""Synthetic cipher-language triangles, parallel-text ingestion, vocabularies
and batching.

The synthetic languages X, Y and Z are renderings of one hidden "base"
language: each language substitutes every base token through its own key
(a permutation) and applies a content-dependent local reordering.  Because
every rendering is derived from a known base sentence, ground-truth
translations between any two languages are available for scoring.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ConfigError, ContractError, ParseError
from .seeding import rng_for

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
LANGS = ("X", "Y", "Z")


@dataclass(frozen=True)
class TokenSeq:
    """A sentence as token ids (or raw strings before vocabulary lookup)."""

    tokens: tuple
    lang: str

    def __post_init__(self):
        if self.lang not in LANGS:
            raise ContractError(f"unknown language tag {self.lang!r}")
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass(frozen=True)
class ParallelPair:
    src: TokenSeq
    tgt: TokenSeq

    def __post_init__(self):
        if self.src.lang == self.tgt.lang:
            raise ContractError("source and target must be in different languages")

    def flipped(self) -> "ParallelPair":
        return ParallelPair(self.tgt, self.src)


class Vocab:
    """Bijective token <-> id map; ids 0-3 are the reserved specials."""

    def __init__(self, tokens: Iterable[str] = (), max_size: int | None = None):
        self.id_to_token = list(SPECIALS)
        for tok in tokens:
            if tok in SPECIALS:
                continue
            if max_size is not None and len(self.id_to_token) >= max_size:
                break
            self.id_to_token.append(tok)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ContractError("duplicate tokens in vocabulary")
        self.max_size = max_size if max_size is not None else len(self.id_to_token)

    def __len__(self):
        return len(self.id_to_token)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(w, UNK) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path):
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != SPECIALS:
            raise ParseError("vocabulary must start with the four reserved tokens", 1)
        return cls(lines[4:])


def build_vocab(sentences: Iterable, max_size: int = 50_000) -> Vocab:
    """Frequency-ranked vocabulary, ties broken lexicographically.

    ``sentences`` may be whitespace-separated strings or token lists.
    ``max_size`` counts the four specials.
    """
    if max_size < 5:
        raise ConfigError("max_size must be at least 5")
    counts = Counter()
    for s in sentences:
        counts.update(s.split() if isinstance(s, str) else s)
    for sp in SPECIALS:
        counts.pop(sp, None)
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocab(ranked[: max_size - len(SPECIALS)], max_size=max_size)


# --------------------------------------------------------------------------
# cipher languages


@dataclass(frozen=True)
class CipherSpec:
    base_vocab_size: int
    substitution_keys: dict
    reorder_window: int = 2
    length_range: tuple = (4, 10)
    zipf_exponent: float = 1.1
    noise_rate: float = 0.0

    def __post_init__(self):
        b = self.base_vocab_size
        if not isinstance(b, int) or b < 1:
            raise ConfigError("base_vocab_size must be a positive integer")
        keys = {k: tuple(int(i) for i in v) for k, v in self.substitution_keys.items()}
        if set(keys) != set(LANGS):
            raise ConfigError("substitution_keys needs exactly one key per language X, Y, Z")
        for lang, key in keys.items():
            if sorted(key) != list(range(b)):
                raise ConfigError(f"substitution key for {lang} is not a permutation of 0..{b - 1}")
        object.__setattr__(self, "substitution_keys", keys)
        lo, hi = (int(v) for v in self.length_range)
        if not 1 <= lo <= hi:
            raise ConfigError("length_range must satisfy 1 <= min <= max")
        object.__setattr__(self, "length_range", (lo, hi))
        if self.reorder_window < 0:
            raise ConfigError("reorder_window must be >= 0")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError("noise_rate must lie in [0, 1)")
        if self.zipf_exponent < 0:
            raise ConfigError("zipf_exponent must be >= 0")

    @classmethod
    def random(cls, base_vocab_size: int, seed: int, **kwargs) -> "CipherSpec":
        keys = {
            lang: tuple(int(i) for i in rng_for(seed, "cipher-key", lang).permutation(base_vocab_size))
            for lang in LANGS
        }
        return cls(base_vocab_size, keys, **kwargs)

    @classmethod
    def identity(cls, base_vocab_size: int, **kwargs) -> "CipherSpec":
        ident = tuple(range(base_vocab_size))
        return cls(base_vocab_size, {lang: ident for lang in LANGS}, **kwargs)

    def inverse_key(self, lang: str) -> np.ndarray:
        inv = np.empty(self.base_vocab_size, dtype=np.int64)
        inv[np.asarray(self.substitution_keys[lang])] = np.arange(self.base_vocab_size)
        return inv

    def triggers(self, lang: str) -> np.ndarray:
        # base tokens whose surface id is divisible by 3 take part in reordering
        return np.asarray(self.substitution_keys[lang]) % 3 == 0

    def to_dict(self) -> dict:
        d = {
            "base_vocab_size": self.base_vocab_size,
            "reorder_window": self.reorder_window,
            "length_min": self.length_range[0],
            "length_max": self.length_range[1],
            "zipf_exponent": self.zipf_exponent,
            "noise_rate": self.noise_rate,
        }
        for lang in LANGS:
            d[f"key_{lang}"] = " ".join(map(str, self.substitution_keys[lang]))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CipherSpec":
        known = {"base_vocab_size", "reorder_window", "length_min", "length_max",
                 "zipf_exponent", "noise_rate"} | {f"key_{lang}" for lang in LANGS}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown cipher spec key(s): {', '.join(sorted(unknown))}")
        try:
            keys = {lang: [int(t) for t in str(d[f"key_{lang}"]).split()] for lang in LANGS}
            return cls(
                int(d["base_vocab_size"]),
                keys,
                reorder_window=int(d.get("reorder_window", 2)),
                length_range=(int(d.get("length_min", 4)), int(d.get("length_max", 10))),
                zipf_exponent=float(d.get("zipf_exponent", 1.1)),
                noise_rate=float(d.get("noise_rate", 0.0)),
            )
        except KeyError as e:
            raise ConfigError(f"missing cipher spec key {e.args[0]}") from None


def _reorder(base: np.ndarray, trig: np.ndarray, window: int) -> np.ndarray:
    # Each block of `window` tokens is reversed when it holds an odd number of
    # trigger tokens.  Reversal keeps the block's multiset, so the rule is an
    # involution and decoding simply applies it again.  For window 2 this is
    # an adjacent swap of (trigger, non-trigger) pairs.
    if window < 2 or len(base) < 2:
        return base.copy()
    out = base.copy()
    for start in range(0, len(base) - 1, window):
        block = out[start:start + window]
        if len(block) >= 2 and int(trig[block].sum()) % 2 == 1:
            out[start:start + window] = block[::-1]
    return out


def encode_cipher(spec: CipherSpec, lang: str, base: Sequence[int], rng=None) -> list[int]:
    """Render a base sentence as surface ids of ``lang``.

    Noise (random replacement) is applied only when ``rng`` is given.
    """
    b = np.asarray(base, dtype=np.int64)
    surface = np.asarray(spec.substitution_keys[lang])[_reorder(b, spec.triggers(lang), spec.reorder_window)]
    if rng is not None and spec.noise_rate > 0:
        hit = rng.random(len(surface)) < spec.noise_rate
        surface[hit] = rng.integers(0, spec.base_vocab_size, int(hit.sum()))
    return surface.tolist()


def decode_cipher(spec: CipherSpec, lang: str, surface: Sequence[int]) -> list[int]:
    base = spec.inverse_key(lang)[np.asarray(surface, dtype=np.int64)]
    return _reorder(base, spec.triggers(lang), spec.reorder_window).tolist()


def surface_token(lang: str, sid: int) -> str:
    return f"{lang.lower()}{sid}"


def translate_surface(spec: CipherSpec, src_lang: str, tgt_lang: str, surface: Sequence[int]) -> list[int]:
    """Ground-truth translation via the base language (noise-free)."""
    return encode_cipher(spec, tgt_lang, decode_cipher(spec, src_lang, surface))


# --------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class CorpusSizes:
    rich_xy: int
    low_xz: int
    low_yz: int
    mono_z: int = 0
    valid: int = 0
    test: int = 0

    @classmethod
    def coerce(cls, sizes) -> "CorpusSizes":
        if isinstance(sizes, CorpusSizes):
            return sizes
        if isinstance(sizes, dict):
            return cls(**sizes)
        return cls(*sizes)


@dataclass
class TriCorpus:
    rich_xy: list
    low_xz: list
    low_yz: list
    mono_z: list
    vocabs: dict
    splits: dict = field(default_factory=dict)
    spec: CipherSpec | None = None

    def pair_lists(self):
        return {"rich_xy": self.rich_xy, "low_xz": self.low_xz, "low_yz": self.low_yz}


class _BigramSource:
    """Zipf-weighted bigram sampler over base token ids."""

    def __init__(self, vocab_size: int, exponent: float, rng, n_successors: int = 4, mix: float = 0.5):
        ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
        uni = ranks ** (-exponent)
        self.unigram_cdf = np.cumsum(uni / uni.sum())
        self.unigram_cdf[-1] = 1.0
        self.successors = np.searchsorted(self.unigram_cdf, rng.random((vocab_size, n_successors)), side="right")
        self.mix = mix

    def _unigram(self, rng, n):
        return np.searchsorted(self.unigram_cdf, rng.random(n), side="right")

    def sample(self, rng, n: int, length_range) -> list[tuple]:
        lo, hi = length_range
        lengths = rng.integers(lo, hi + 1, n)
        toks = np.empty((n, hi), dtype=np.int64)
        toks[:, 0] = self._unigram(rng, n)
        for t in range(1, hi):
            use_succ = rng.random(n) < self.mix
            succ = self.successors[toks[:, t - 1], rng.integers(0, self.successors.shape[1], n)]
            toks[:, t] = np.where(use_succ, succ, self._unigram(rng, n))
        return [tuple(row[:ln].tolist()) for row, ln in zip(toks, lengths)]


def _unique_pool(source: _BigramSource, spec: CipherSpec, n: int, rng) -> list[tuple]:
    lo, hi = spec.length_range
    v = spec.base_vocab_size
    capacity = sum(v ** k for k in range(lo, hi + 1))
    if n > capacity:
        raise CapacityError(f"requested {n} distinct sentences but only {capacity} exist")
    seen = {}
    budget = 50 * n + 1000
    drawn = 0
    while len(seen) < n:
        if drawn > budget:
            raise CapacityError(f"could only generate {len(seen)} of {n} distinct base sentences")
        batch = source.sample(rng, max(256, 2 * (n - len(seen))), spec.length_range)
        drawn += len(batch)
        for s in batch:
            seen.setdefault(s, None)
            if len(seen) == n:
                break
    return list(seen)


def generate_tri_corpus(spec: CipherSpec, sizes, seed: int, overlap: float = 0.0,
                        max_vocab: int | None = None) -> TriCorpus:
    """Generate a synthetic triangle of X/Y/Z corpora.

    All pools (rich, both low-resource pairs, monolingual Z, validation and
    test) come from distinct base sentences, except that a fraction
    ``overlap`` of the (Y,Z) pairs reuses base sentences of the (X,Z) pairs,
    which makes the two low-resource sets share their Z side.
    """
    sizes = CorpusSizes.coerce(sizes)
    if min(sizes.rich_xy, sizes.low_xz, sizes.low_yz) < 1 or min(sizes.mono_z, sizes.valid, sizes.test) < 0:
        raise ConfigError("pair counts must be positive and pool sizes non-negative")
    if not 0.0 <= overlap <= 1.0:
        raise ConfigError("overlap must lie in [0, 1]")

    source = _BigramSource(spec.base_vocab_size, spec.zipf_exponent, rng_for(seed, "bigram-source"))
    n_shared = int(round(overlap * min(sizes.low_yz, sizes.low_xz)))
    order = [("rich_xy", sizes.rich_xy), ("low_xz", sizes.low_xz), ("low_yz", sizes.low_yz - n_shared),
             ("mono_z", sizes.mono_z),
             ("valid_xz", sizes.valid), ("valid_yz", sizes.valid),
             ("test_xz", sizes.test), ("test_yz", sizes.test)]
    pool = _unique_pool(source, spec, sum(n for _, n in order), rng_for(seed, "base-sentences"))
    bases, start = {}, 0
    for name, n in order:
        bases[name] = pool[start:start + n]
        start += n
    bases["low_yz"] = bases["low_xz"][:n_shared] + bases["low_yz"]

    noise_rng = rng_for(seed, "noise")

    def render(lang, base):
        return [surface_token(lang, s) for s in encode_cipher(spec, lang, base, noise_rng)]

    raw = {}
    for name, (a, b) in [("rich_xy", "XY"), ("low_xz", "XZ"), ("low_yz", "YZ"), ("valid_xz", "XZ"),
                         ("valid_yz", "YZ"), ("test_xz", "XZ"), ("test_yz", "YZ")]:
        raw[name] = [(render(a, s), render(b, s), a, b) for s in bases[name]]
    mono_raw = [render("Z", s) for s in bases["mono_z"]]

    cap = max_vocab or spec.base_vocab_size + len(SPECIALS)
    vocabs = {
        "X": build_vocab([p[0] for p in raw["rich_xy"]] + [p[0] for p in raw["low_xz"]], cap),
        "Y": build_vocab([p[1] for p in raw["rich_xy"]] + [p[0] for p in raw["low_yz"]], cap),
        "Z": build_vocab([p[1] for p in raw["low_xz"]] + [p[1] for p in raw["low_yz"]] + mono_raw, cap),
    }

    def encode_pairs(items):
        return [ParallelPair(TokenSeq(vocabs[a].encode(s), a), TokenSeq(vocabs[b].encode(t), b))
                for s, t, a, b in items]

    return TriCorpus(
        rich_xy=encode_pairs(raw["rich_xy"]),
        low_xz=encode_pairs(raw["low_xz"]),
        low_yz=encode_pairs(raw["low_yz"]),
        mono_z=[TokenSeq(vocabs["Z"].encode(s), "Z") for s in mono_raw],
        vocabs=vocabs,
        splits={name: encode_pairs(raw[name]) for name in ("valid_xz", "valid_yz", "test_xz", "test_yz")},
        spec=spec,
    )


# --------------------------------------------------------------------------
# ingestion and preprocessing


def load_parallel(path, fmt: str = "tsv", langs=("X", "Z"), vocabs: dict | None = None) -> list[ParallelPair]:
    """Read ``source<TAB>target`` lines into whitespace-tokenized pairs.

    Without ``vocabs`` the pair tokens stay as strings.
    """
    if fmt != "tsv":
        raise ConfigError(f"unsupported format {fmt!r}")
    a, b = langs
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError("expected 'source<TAB>target'", lineno)
            s, t = line.split("\t", 1)
            s, t = s.split(), t.split()
            if vocabs is not None:
                s, t = vocabs[a].encode(s), vocabs[b].encode(t)
            pairs.append(ParallelPair(TokenSeq(s, a), TokenSeq(t, b)))
    return pairs


def load_mono(path, lang: str = "Z", vocab: Vocab | None = None) -> list[TokenSeq]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            words = line.split()
            if words:
                out.append(TokenSeq(vocab.encode(words) if vocab else words, lang))
    return out


def filter_by_length(pairs: Sequence[ParallelPair], min_len: int = 5, max_len: float = 50) -> list[ParallelPair]:
    if min_len > max_len:
        raise ContractError("min_len must not exceed max_len")
    return [p for p in pairs
            if min_len <= len(p.src) <= max_len and min_len <= len(p.tgt) <= max_len]


@dataclass
class Batch:
    pairs: list
    src: np.ndarray
    tgt: np.ndarray
    src_lens: np.ndarray
    tgt_lens: np.ndarray

    def __len__(self):
        return len(self.pairs)


def pad_sequences(seqs: Sequence[Sequence[int]], pad: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    lens = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lens.max()) if len(seqs) else 0), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lens


def make_batches(pairs: Sequence[ParallelPair], batch_size: int = 64, seed: int = 0,
                 shuffle: bool = True) -> list[Batch]:
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    if not pairs:
        return []
    order = np.random.default_rng(seed).permutation(len(pairs)) if shuffle else np.arange(len(pairs))
    batches = []
    for start in range(0, len(pairs), batch_size):
        chunk = [pairs[i] for i in order[start:start + batch_size]]
        src, src_lens = pad_sequences([p.src.tokens for p in chunk])
        tgt, tgt_lens = pad_sequences([p.tgt.tokens for p in chunk])
        batches.append(Batch(chunk, src, tgt, src_lens, tgt_lens))
    return batches


# --------------------------------------------------------------------------
# corpus files


def _write_pairs(path: Path, pairs, vocabs):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            s = " ".join(vocabs[p.src.lang].decode(p.src.tokens))
            t = " ".join(vocabs[p.tgt.lang].decode(p.tgt.tokens))
            fh.write(f"{s}\t{t}\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


PAIR_FILES = {"rich_xy": "XY", "low_xz": "XZ", "low_yz": "YZ",
              "valid_xz": "XZ", "valid_yz": "YZ", "test_xz": "XZ", "test_yz": "YZ"}


def write_corpus(corpus: TriCorpus, out_dir) -> dict:
    """Write pair/mono/vocab files plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    lists = {**corpus.pair_lists(), **corpus.splits}
    for name in PAIR_FILES:
        if name in lists:
            _write_pairs(out / f"{name}.tsv", lists[name], corpus.vocabs)
            files[name] = f"{name}.tsv"
    with open(out / "mono_z.txt", "w", encoding="utf-8") as fh:
        for s in corpus.mono_z:
            fh.write(" ".join(corpus.vocabs["Z"].decode(s.tokens)) + "\n")
    files["mono_z"] = "mono_z.txt"
    for lang, v in corpus.vocabs.items():
        v.save(out / f"vocab.{lang}.txt")
        files[f"vocab_{lang}"] = f"vocab.{lang}.txt"
    manifest = {
        "format_version": 1,
        "files": files,
        "sha256": {k: _sha256(out / f) for k, f in sorted(files.items())},
        "sizes": {k: len(v) for k, v in lists.items()} | {"mono_z": len(corpus.mono_z)},
        "cipher_spec": corpus.spec.to_dict() if corpus.spec else None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def read_corpus(corpus_dir) -> TriCorpus:
    d = Path(corpus_dir)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    files = manifest["files"]
    vocabs = {lang: Vocab.load(d / files[f"vocab_{lang}"]) for lang in LANGS}
    lists = {name: load_parallel(d / files[name], langs=tuple(PAIR_FILES[name]), vocabs=vocabs)
             for name in PAIR_FILES if name in files}
    mono = load_mono(d / files["mono_z"], "Z", vocabs["Z"]) if "mono_z" in files else []
    spec = CipherSpec.from_dict(manifest["cipher_spec"]) if manifest.get("cipher_spec") else None
    return TriCorpus(
        rich_xy=lists.pop("rich_xy"), low_xz=lists.pop("low_xz"), low_yz=lists.pop("low_yz"),
        mono_z=mono, vocabs=vocabs, splits=lists, spec=spec,
    )


def corpus_fingerprint(corpus: TriCorpus) -> str:
    h = hashlib.sha256()
    for name, pairs in sorted({**corpus.pair_lists(), **corpus.splits}.items()):
        h.update(name.encode())
        for p in pairs:
            h.update(repr((p.src.tokens, p.tgt.tokens)).encode())
    for s in corpus.mono_z:
        h.update(repr(s.tokens).encode())
    return h.hexdigest()


def reference_model_map(corpus: TriCorpus, src_lang: str, tgt_lang: str):
    """Vocabulary-id level ground-truth translator for a noise-free corpus.

    Returns a function mapping a source id sequence to the target id
    sequence the cipher would produce.
    """
    spec = corpus.spec
    if spec is None:
        raise ConfigError("corpus carries no cipher spec")
    sv, tv = corpus.vocabs[src_lang], corpus.vocabs[tgt_lang]
    prefix = len(src_lang)

    def translate(ids):
        words = sv.decode(ids)
        if any(w in SPECIALS for w in words):
            return []
        surface = [int(w[prefix:]) for w in words]
        out = translate_surface(spec, src_lang, tgt_lang, surface)
        return tv.encode(surface_token(tgt_lang, s) for s in out)

    return translate

