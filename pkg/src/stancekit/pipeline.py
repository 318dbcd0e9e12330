"""Named feature pipelines: fit on a training corpus, then featurize.

A pipeline is an ordered list of feature blocks (baseline TF + TF-IDF
cosine, keyword indicator bits, embedding similarity). Fitting derives
every data-dependent part (vocabularies, IDF weights, keyword selections)
from the training corpus alone, so cross-validation folds rebuilt through
fit_pipeline stay leakage-free by construction.

The per-instance features() path goes through the block modules directly;
the matrix() path assembles the same values into a CSR matrix for
training-scale work. Tests pin the two paths to each other.
"""

from __future__ import annotations

import json
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Corpus, Instance, Stance
from .embeddings import EmbeddingTable, SIMILARITY_MODES, similarity_block
from .ensemble import CONCATENATION, EnsembleSpec, fuse_concatenation, fuse_summation
from .errors import ConfigError, DataFormatError
from .keywords import (
    KeywordSet,
    corpus_documents,
    read_keyword_set,
    select_keywords_mi,
    select_keywords_micc,
    stance_positive_bodies,
    write_keyword_set,
)
from .mlp import MlpModel, predict_batch
from .stopwords import ENGLISH_STOPWORDS
from .text import (
    BlockSlice,
    FeatureVector,
    IdfTable,
    Vocabulary,
    build_idf,
    build_vocabulary,
    dump_vocabulary,
    load_vocabulary,
    tf_counts,
    tfidf_cosine,
    tokenize,
)

BASELINE = "baseline"
INDICATOR = "indicator"
SIMILARITY = "similarity"
BLOCK_KINDS = (BASELINE, INDICATOR, SIMILARITY)

SELECTORS = ("manual", "mi", "micc")

#: TF vocabulary capacity of the baseline blocks.
DEFAULT_VOCAB_CAPACITY = 5000


@dataclass(frozen=True)
class KeywordSpec:
    """How to obtain one keyword set when fitting a pipeline."""

    name: str
    selector: str
    terms: tuple[str, ...] = ()  # manual only
    k: int = 20  # mi / micc
    themes: tuple[str, ...] = ()  # micc only
    positive: tuple[Stance, ...] = (Stance.DISAGREE,)  # mi only

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ConfigError(f"keyword set {self.name!r}: unknown selector {self.selector!r}")
        if self.selector == "manual" and not self.terms:
            raise ConfigError(f"keyword set {self.name!r}: manual selector needs terms")
        if self.selector == "micc" and not self.themes:
            raise ConfigError(f"keyword set {self.name!r}: micc selector needs themes")
        if self.selector != "manual" and self.k < 0:
            raise ConfigError(f"keyword set {self.name!r}: k must be >= 0")


@dataclass(frozen=True)
class BlockSpec:
    """One feature block of a pipeline."""

    kind: str
    keywords: str | None = None  # indicator: name of a KeywordSpec
    mode: str | None = None  # similarity: centroid | wmd-exact | wmd-relaxed

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown feature block kind {self.kind!r}")
        if self.kind == INDICATOR and not self.keywords:
            raise ConfigError("indicator block needs a keyword-set name")
        if self.kind == SIMILARITY and self.mode not in SIMILARITY_MODES:
            raise ConfigError(f"similarity block needs a mode from {SIMILARITY_MODES}")


@dataclass(frozen=True)
class PipelineSpec:
    name: str
    blocks: tuple[BlockSpec, ...]

    def __post_init__(self):
        if not self.blocks:
            raise ConfigError(f"pipeline {self.name!r} has no feature blocks")
        if len(set(self.blocks)) != len(self.blocks):
            raise ConfigError(f"pipeline {self.name!r} repeats a feature block")


@dataclass(frozen=True)
class FeatureMatrix:
    """CSR example-by-feature matrix plus the shared block layout."""

    matrix: sp.csr_matrix
    layout: tuple[BlockSlice, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def _micc_flat(groups: Mapping[str, KeywordSet], spec: KeywordSpec) -> KeywordSet:
    # theme groups flatten to one ordered, deduplicated indicator list
    seen: dict[str, None] = {}
    for theme in spec.themes:
        for term in groups[theme].terms:
            seen.setdefault(term)
    params = (("themes", "+".join(spec.themes)), ("k", str(spec.k)))
    return KeywordSet(
        name=spec.name, terms=tuple(seen), provenance="micc", params=params
    )


def fit_keyword_set(
    spec: KeywordSpec, corpus: Corpus, candidates: Sequence[str]
) -> KeywordSet:
    if spec.selector == "manual":
        return KeywordSet(
            name=spec.name, terms=spec.terms, provenance="manual", params=()
        )
    documents = corpus_documents(corpus)
    if spec.selector == "mi":
        positive = stance_positive_bodies(corpus, spec.positive)
        classes = "+".join(s.value for s in spec.positive)
        ks = select_keywords_mi(documents, positive, candidates, spec.k, name=spec.name)
        return KeywordSet(
            name=spec.name,
            terms=ks.terms,
            provenance="mi",
            params=(("positive", classes), ("k", str(spec.k))),
        )
    groups = select_keywords_micc(
        documents, spec.themes, candidates, spec.k, name_prefix=spec.name
    )
    return _micc_flat(groups, spec)


@dataclass
class FittedPipeline:
    """A pipeline after fitting; read-only once constructed.

    Tokenization caches make repeated featurization of the same bodies
    cheap; they hold only train-independent token lists, never fitted
    state, so sharing an instance across evaluations is safe.
    """

    spec: PipelineSpec
    headline_vocab: Vocabulary | None
    body_vocab: Vocabulary | None
    shared_vocab: Vocabulary | None
    idf: IdfTable | None
    keyword_sets: dict[str, KeywordSet]
    embeddings: EmbeddingTable | None
    tf_log1p: bool = False
    _head_tok: dict[str, list[str]] = field(default_factory=dict, repr=False)
    _body_tok: dict[int, list[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        layout: list[BlockSlice] = []
        offset = 0

        def add(name: str, length: int):
            nonlocal offset
            layout.append(BlockSlice(name, offset, length))
            offset += length

        for block in self.spec.blocks:
            if block.kind == BASELINE:
                add("tf_headline", len(self.headline_vocab))
                add("tf_body", len(self.body_vocab))
                add("tfidf_cos", 1)
            elif block.kind == INDICATOR:
                ks = self.keyword_sets[block.keywords]
                add(f"kw_{ks.name}", 2 * len(ks.terms))
            else:
                add("emb_" + block.mode.replace("-", "_"), 1)
        names = [b.name for b in layout]
        if len(set(names)) != len(names):
            raise ConfigError(f"pipeline {self.spec.name!r} has duplicate block names")
        self.layout = tuple(layout)
        self.input_dim = offset

    def _headline_tokens(self, headline: str) -> list[str]:
        toks = self._head_tok.get(headline)
        if toks is None:
            toks = self._head_tok[headline] = tokenize(headline)
        return toks

    def _body_tokens(self, corpus: Corpus, body_id: int) -> list[str]:
        toks = self._body_tok.get(body_id)
        if toks is None:
            toks = self._body_tok[body_id] = tokenize(corpus.body_text(body_id))
        return toks

    def _tf(self, count: int) -> float:
        return float(np.log1p(count)) if self.tf_log1p else float(count)

    def _entries(self, instance: Instance, corpus: Corpus) -> list[tuple[int, float]]:
        """Sparse (column, value) pairs; identical values to features()."""
        head = self._headline_tokens(instance.headline)
        body = self._body_tokens(corpus, instance.body_id)
        out: list[tuple[int, float]] = []
        pos = 0
        for block in self.spec.blocks:
            if block.kind == BASELINE:
                tf_head, tf_body, cos_slice = self.layout[pos : pos + 3]
                pos += 3
                for i, c in tf_counts(head, self.headline_vocab).items():
                    out.append((tf_head.offset + i, self._tf(c)))
                for i, c in tf_counts(body, self.body_vocab).items():
                    out.append((tf_body.offset + i, self._tf(c)))
                cos = tfidf_cosine(head, body, self.shared_vocab, self.idf)
                if cos != 0.0:
                    out.append((cos_slice.offset, cos))
            elif block.kind == INDICATOR:
                slc = self.layout[pos]
                pos += 1
                head_set, body_set = set(head), set(body)
                for i, term in enumerate(self.keyword_sets[block.keywords].terms):
                    if term in head_set:
                        out.append((slc.offset + 2 * i, 1.0))
                    if term in body_set:
                        out.append((slc.offset + 2 * i + 1, 1.0))
            else:
                slc = self.layout[pos]
                pos += 1
                value = similarity_block(
                    instance, corpus, self.embeddings, block.mode
                ).values[0]
                if value != 0.0:
                    out.append((slc.offset, float(value)))
        return out

    def features(self, instance: Instance, corpus: Corpus) -> FeatureVector:
        """Dense feature vector for one instance."""
        values = np.zeros(self.input_dim, dtype=np.float64)
        for col, val in self._entries(instance, corpus):
            values[col] = val
        return FeatureVector(values=values, layout=self.layout)

    def matrix(self, corpus: Corpus) -> FeatureMatrix:
        """CSR feature matrix over all corpus instances, in corpus order."""
        data = array("d")
        indices = array("q")
        indptr = array("q", [0])
        for instance in corpus.instances:
            entries = sorted(self._entries(instance, corpus))
            indices.extend(col for col, _ in entries)
            data.extend(val for _, val in entries)
            indptr.append(len(indices))
        # copies: frombuffer views are read-only, scipy wants writable arrays
        mat = sp.csr_matrix(
            (
                np.frombuffer(data, dtype=np.float64).copy(),
                np.frombuffer(indices, dtype=np.int64).copy(),
                np.frombuffer(indptr, dtype=np.int64).copy(),
            ),
            shape=(len(corpus.instances), self.input_dim),
        )
        return FeatureMatrix(matrix=mat, layout=self.layout)


def fit_pipeline(
    spec: PipelineSpec,
    corpus: Corpus,
    keyword_specs: Mapping[str, KeywordSpec] | None = None,
    embeddings: EmbeddingTable | None = None,
    vocab_capacity: int = DEFAULT_VOCAB_CAPACITY,
    tf_log1p: bool = False,
) -> FittedPipeline:
    """Fit all data-dependent state of a pipeline from the training corpus."""
    keyword_specs = keyword_specs or {}
    head_tokens = [tokenize(i.headline) for i in corpus.instances]
    body_tokens = {bid: tokenize(text) for bid, text in corpus.bodies.items()}

    headline_vocab = body_vocab = shared_vocab = None
    idf = None
    if any(b.kind == BASELINE for b in spec.blocks):
        headline_vocab = build_vocabulary(
            head_tokens, vocab_capacity, ENGLISH_STOPWORDS, source="headline"
        )
        body_vocab = build_vocabulary(
            body_tokens.values(), vocab_capacity, ENGLISH_STOPWORDS, source="body"
        )
        all_docs = head_tokens + list(body_tokens.values())
        shared_vocab = build_vocabulary(
            all_docs, vocab_capacity, ENGLISH_STOPWORDS, source="shared"
        )
        idf = build_idf(all_docs, shared_vocab)

    candidate_vocab: Vocabulary | None = None
    keyword_sets: dict[str, KeywordSet] = {}
    for block in spec.blocks:
        if block.kind == INDICATOR:
            if block.keywords not in keyword_specs:
                raise ConfigError(
                    f"pipeline {spec.name!r} references undefined keyword set "
                    f"{block.keywords!r}"
                )
            kw_spec = keyword_specs[block.keywords]
            if kw_spec.selector != "manual" and candidate_vocab is None:
                candidate_vocab = body_vocab or build_vocabulary(
                    body_tokens.values(), vocab_capacity, ENGLISH_STOPWORDS, source="body"
                )
            candidates = candidate_vocab.terms if candidate_vocab else ()
            keyword_sets[block.keywords] = fit_keyword_set(kw_spec, corpus, candidates)
        elif block.kind == SIMILARITY and embeddings is None:
            raise ConfigError(
                f"pipeline {spec.name!r} has a similarity block but no "
                "embedding table is configured"
            )

    return FittedPipeline(
        spec=spec,
        headline_vocab=headline_vocab,
        body_vocab=body_vocab,
        shared_vocab=shared_vocab,
        idf=idf,
        keyword_sets=keyword_sets,
        embeddings=embeddings,
        tf_log1p=tf_log1p,
    )


def stance_labels(corpus: Corpus) -> np.ndarray:
    """Canonical label indices for a fully labeled corpus."""
    labels = np.empty(len(corpus.instances), dtype=np.int64)
    for row, instance in enumerate(corpus.instances):
        if instance.stance is None:
            raise ValueError(f"instance {row} is unlabeled")
        labels[row] = instance.stance.index
    return labels


def member_probabilities(
    model: MlpModel, fitted: FittedPipeline, corpus: Corpus
) -> np.ndarray:
    """(n, 4) probability rows, with a layout compatibility check."""
    fm = fitted.matrix(corpus)
    if fm.layout != model.feature_layout:
        pipe = ", ".join(f"{b.name}:{b.length}" for b in fm.layout)
        got = ", ".join(f"{b.name}:{b.length}" for b in model.feature_layout)
        raise ValueError(
            f"pipeline layout [{pipe}] does not match model layout [{got}]"
        )
    return predict_batch(model, fm.matrix)[1]


def ensemble_predictions(
    spec: EnsembleSpec,
    models: Mapping[str, MlpModel],
    pipelines: Mapping[str, FittedPipeline],
    corpus: Corpus,
) -> tuple[list[Stance], np.ndarray]:
    """Fused decisions and probabilities for every corpus instance."""
    member_rows = []
    for member in spec.members:
        if member.model not in models:
            raise ConfigError(f"ensemble {spec.name!r}: no model {member.model!r}")
        if member.pipeline not in pipelines:
            raise ConfigError(f"ensemble {spec.name!r}: no pipeline {member.pipeline!r}")
        member_rows.append(
            member_probabilities(models[member.model], pipelines[member.pipeline], corpus)
        )
    decided: list[Stance] = []
    fused_rows = np.empty((len(corpus.instances), 4))
    for i in range(len(corpus.instances)):
        probs = [rows[i] for rows in member_rows]
        if spec.rule == CONCATENATION:
            out = fuse_concatenation(probs, spec.combiner)
        else:
            out = fuse_summation(probs)
        decided.append(out.decided)
        fused_rows[i] = out.fused
    return decided, fused_rows


def save_pipeline(fitted: FittedPipeline, out_dir: str | Path, name: str) -> None:
    """Write the fitted artifact set plus a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    for tag, vocab in (
        ("headline_vocab", fitted.headline_vocab),
        ("body_vocab", fitted.body_vocab),
        ("shared_vocab", fitted.shared_vocab),
    ):
        if vocab is not None:
            fname = f"{name}.{tag}.txt"
            dump_vocabulary(vocab, out / fname)
            files[tag] = fname
    if fitted.idf is not None:
        fname = f"{name}.idf.txt"
        lines = [f"document_count={fitted.idf.document_count}"]
        lines.extend(repr(float(v)) for v in fitted.idf.values)
        (out / fname).write_text("\n".join(lines) + "\n", encoding="utf-8")
        files["idf"] = fname
    for ref, ks in fitted.keyword_sets.items():
        fname = f"{name}.kw.{ref}.txt"
        write_keyword_set(ks, out / fname)
        files[f"keywords:{ref}"] = fname
    manifest = {
        "format": "stancekit-pipeline",
        "version": 1,
        "name": name,
        "tf_log1p": fitted.tf_log1p,
        "blocks": [
            {"kind": b.kind, "keywords": b.keywords, "mode": b.mode}
            for b in fitted.spec.blocks
        ],
        # from the spec, not the attached table: a shared table may be handed
        # to every pipeline of a run even when this one has no similarity block
        "needs_embeddings": any(b.kind == SIMILARITY for b in fitted.spec.blocks),
        "files": files,
    }
    (out / f"{name}.pipeline.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8"
    )


def load_pipeline(
    out_dir: str | Path, name: str, embeddings: EmbeddingTable | None = None
) -> FittedPipeline:
    """Rebuild a FittedPipeline from save_pipeline artifacts."""
    out = Path(out_dir)
    manifest_path = out / f"{name}.pipeline.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"no fitted pipeline {name!r} under {out}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{manifest_path}: {exc}") from None
    if manifest.get("format") != "stancekit-pipeline" or manifest.get("version") != 1:
        raise DataFormatError(f"{manifest_path}: unsupported pipeline manifest")
    files = manifest["files"]

    def vocab_of(tag: str, source: str) -> Vocabulary | None:
        return load_vocabulary(out / files[tag], source) if tag in files else None

    headline_vocab = vocab_of("headline_vocab", "headline")
    body_vocab = vocab_of("body_vocab", "body")
    shared_vocab = vocab_of("shared_vocab", "shared")
    idf = None
    if "idf" in files:
        lines = (out / files["idf"]).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("document_count="):
            raise DataFormatError(f"{files['idf']}: missing document_count header")
        idf = IdfTable(
            vocab=shared_vocab,
            values=np.array([float(v) for v in lines[1:]], dtype=np.float64),
            document_count=int(lines[0].partition("=")[2]),
        )
    keyword_sets = {
        key.partition(":")[2]: read_keyword_set(out / fname)
        for key, fname in files.items()
        if key.startswith("keywords:")
    }
    blocks = tuple(
        BlockSpec(kind=b["kind"], keywords=b.get("keywords"), mode=b.get("mode"))
        for b in manifest["blocks"]
    )
    if manifest.get("needs_embeddings") and embeddings is None:
        raise ConfigError(
            f"pipeline {name!r} uses embedding features; pass the embedding table"
        )
    return FittedPipeline(
        spec=PipelineSpec(name=manifest["name"], blocks=blocks),
        headline_vocab=headline_vocab,
        body_vocab=body_vocab,
        shared_vocab=shared_vocab,
        idf=idf,
        keyword_sets=keyword_sets,
        embeddings=embeddings,
        tf_log1p=bool(manifest.get("tf_log1p", False)),
    )
