"""Application configuration: one TOML file, typed sections, strict keys."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

from .corpus import DEFAULT_COLUMNS, DEFAULT_DATE_FORMAT, CsvFormatConfig
from .errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

CONFIG_ENV = "RESOLV_REC_CONFIG"

# stage seeds are master seed + fixed offset
SEED_OFFSETS = {
    "split": 1,
    "cluster": 2,
    "lda": 3,
    "siamese": 4,
    "indexembed": 5,
    "ensemble": 6,
    "folds": 7,
    "infer": 8,
    "augment": 9,
    "wordvec": 10,
}


@dataclass(frozen=True)
class CorpusSection:
    columns: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    date_format: str = DEFAULT_DATE_FORMAT

    def csv_format(self) -> CsvFormatConfig:
        return CsvFormatConfig(dict(self.columns), self.date_format)


@dataclass(frozen=True)
class TextSection:
    mode: str = "lemma+stem"
    min_df: int = 2
    max_df_ratio: float = 0.5
    ngram_max: int = 3
    stopwords_path: str | None = None
    word_vectors_path: str | None = None
    wv_dim: int = 100
    subword_min: int = 3
    subword_max: int = 5
    hash_buckets: int = 1 << 18


@dataclass(frozen=True)
class SplitSection:
    ratio: float = 0.8
    mode: str = "stratified"


@dataclass(frozen=True)
class ClusterSection:
    method: str = "kmeans"
    k: int = 10
    seed: int | None = None
    n_init: int = 10
    features: str = "tfidf"


@dataclass(frozen=True)
class LdaSection:
    K: int | None = None
    alpha: float | None = None
    beta: float = 0.01
    sweeps: int = 500
    infer_sweeps: int = 50


@dataclass(frozen=True)
class SiameseSection:
    margin: float = 0.2
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    freeze: bool = True
    fine_tune_epochs: int = 20


@dataclass(frozen=True)
class IndexEmbedSection:
    d: int = 64
    neg_k: int = 5
    lr: float = 0.01
    epochs: int = 100


@dataclass(frozen=True)
class EnsembleSection:
    l2: float = 1e-3
    lr: float = 0.1
    epochs: int = 300
    batch_size: int = 32
    folds: int = 5
    disabled: tuple[str, ...] = ()


@dataclass(frozen=True)
class InferenceSection:
    threshold: float = 0.30
    top_n: int = 3
    fallback_k: int = 5
    fallback_space: str = "wordvec"


@dataclass(frozen=True)
class DriftSection:
    threshold: float = 0.1
    window: int = 10


@dataclass(frozen=True)
class ServiceSection:
    host: str = "127.0.0.1"
    port: int = 8080
    log_path: str | None = None


@dataclass(frozen=True)
class TrainSection:
    seed: int = 42
    window_days: float | None = None
    require_resolution: bool = False


_SECTIONS = {
    "corpus": CorpusSection,
    "text": TextSection,
    "split": SplitSection,
    "cluster": ClusterSection,
    "lda": LdaSection,
    "siamese": SiameseSection,
    "indexembed": IndexEmbedSection,
    "ensemble": EnsembleSection,
    "inference": InferenceSection,
    "drift": DriftSection,
    "service": ServiceSection,
    "train": TrainSection,
}


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class AppConfig:
    corpus: CorpusSection = CorpusSection()
    text: TextSection = TextSection()
    split: SplitSection = SplitSection()
    cluster: ClusterSection = ClusterSection()
    lda: LdaSection = LdaSection()
    siamese: SiameseSection = SiameseSection()
    indexembed: IndexEmbedSection = IndexEmbedSection()
    ensemble: EnsembleSection = EnsembleSection()
    inference: InferenceSection = InferenceSection()
    drift: DriftSection = DriftSection()
    service: ServiceSection = ServiceSection()
    train: TrainSection = TrainSection()

    def __post_init__(self):
        t, s, c, l = self.text, self.split, self.cluster, self.lda
        _check(t.mode in ("stem", "lemma+stem"), f"text.mode must be 'stem' or 'lemma+stem', got {t.mode!r}")
        _check(t.min_df >= 1, "text.min_df must be >= 1")
        _check(0 < t.max_df_ratio <= 1, "text.max_df_ratio must be in (0, 1]")
        _check(1 <= t.ngram_max <= 3, "text.ngram_max must be in [1, 3]")
        _check(t.wv_dim >= 1 and t.hash_buckets >= 1, "text.wv_dim and text.hash_buckets must be >= 1")
        _check(1 <= t.subword_min <= t.subword_max, "need 1 <= text.subword_min <= text.subword_max")
        _check(0 < s.ratio < 1, "split.ratio must be in (0, 1)")
        _check(s.mode in ("stratified", "shuffle", "time"), f"unknown split.mode {s.mode!r}")
        _check(c.method in ("kmeans", "gmm"), f"cluster.method must be kmeans or gmm, got {c.method!r}")
        _check(c.k >= 1 and c.n_init >= 1, "cluster.k and cluster.n_init must be >= 1")
        _check(c.features in ("tfidf", "wordvec"), f"cluster.features must be tfidf or wordvec, got {c.features!r}")
        _check(l.K is None or l.K >= 1, "lda.K must be >= 1")
        _check(l.alpha is None or l.alpha > 0, "lda.alpha must be > 0")
        _check(l.beta > 0 and l.sweeps >= 1 and l.infer_sweeps >= 1, "lda.beta > 0 and sweeps >= 1 required")
        sm = self.siamese
        _check(sm.margin > 0 and sm.lr > 0 and sm.epochs >= 1 and sm.batch_size >= 1, "invalid siamese section")
        _check(sm.fine_tune_epochs >= 0, "siamese.fine_tune_epochs must be >= 0")
        ie = self.indexembed
        _check(ie.d >= 1 and ie.neg_k >= 1 and ie.lr > 0 and ie.epochs >= 1, "invalid indexembed section")
        en = self.ensemble
        _check(en.l2 >= 0 and en.lr > 0 and en.epochs >= 1 and en.batch_size >= 1, "invalid ensemble section")
        _check(en.folds >= 2, "ensemble.folds must be >= 2")
        _check(set(en.disabled) <= {"lda", "siamese", "indexembed"}, f"unknown base model in ensemble.disabled: {en.disabled}")
        _check(len(en.disabled) < 3, "at least one base model must stay enabled")
        inf = self.inference
        _check(0 <= inf.threshold <= 1, "inference.threshold must be in [0, 1]")
        _check(inf.top_n >= 1 and inf.fallback_k >= 1, "inference.top_n and fallback_k must be >= 1")
        _check(inf.fallback_space in ("wordvec", "siamese"), "inference.fallback_space must be wordvec or siamese")
        _check(self.drift.threshold >= 0 and self.drift.window >= 1, "invalid drift section")
        _check(0 <= self.service.port <= 65535, "service.port out of range")
        _check(self.train.window_days is None or self.train.window_days > 0, "train.window_days must be > 0")

    def seed(self, stage: str) -> int:
        if stage == "cluster" and self.cluster.seed is not None:
            return self.cluster.seed
        return self.train.seed + SEED_OFFSETS[stage]

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            sec = asdict(getattr(self, f.name))
            if f.name == "corpus":
                sec = {"col": dict(sec["columns"]), "date": {"format": sec["date_format"]}}
            if f.name == "ensemble":
                sec["disabled"] = list(sec["disabled"])
            out[f.name] = {k: v for k, v in sec.items() if v is not None}
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AppConfig":
        kwargs = {}
        for name, section in data.items():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown config section {name!r}")
            if not isinstance(section, Mapping):
                raise ConfigError(f"config section {name!r} must be a table")
            sec_cls = _SECTIONS[name]
            if name == "corpus":
                kwargs[name] = _corpus_section(section)
                continue
            allowed = {f.name: f for f in fields(sec_cls)}
            for key in section:
                if key not in allowed:
                    raise ConfigError(f"unknown key {name}.{key}")
            values = dict(section)
            if name == "ensemble" and "disabled" in values:
                values["disabled"] = tuple(values["disabled"])
            try:
                kwargs[name] = sec_cls(**values)
            except TypeError as exc:
                raise ConfigError(f"section {name}: {exc}") from None
        return cls(**kwargs)

    def override(self, section: str, **values) -> "AppConfig":
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        return replace(self, **{section: replace(getattr(self, section), **values)})


def _corpus_section(section: Mapping) -> CorpusSection:
    cols = dict(DEFAULT_COLUMNS)
    date_format = DEFAULT_DATE_FORMAT
    for key, value in section.items():
        if key == "col":
            for field_name, column in value.items():
                if field_name not in DEFAULT_COLUMNS:
                    raise ConfigError(f"unknown key corpus.col.{field_name}")
                cols[field_name] = str(column)
        elif key == "date":
            for sub, v in value.items():
                if sub != "format":
                    raise ConfigError(f"unknown key corpus.date.{sub}")
                date_format = str(v)
        else:
            raise ConfigError(f"unknown key corpus.{key}")
    return CorpusSection(cols, date_format)


def load_config(path: str | os.PathLike | None = None) -> AppConfig:
    """Read ``$RESOLV_REC_CONFIG`` if set (it overrides ``path``), else ``path``, else defaults."""
    path = os.environ.get(CONFIG_ENV) or path
    if not path:
        return AppConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return AppConfig.from_dict(data)
