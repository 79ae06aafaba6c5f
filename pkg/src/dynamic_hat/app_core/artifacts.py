"""
Versioned JSON / JSONL artifact persistence.

Every JSON artifact carries ``"format_version": 1``; every JSONL row that is
an artifact record (corpus pair, latency sample) carries it too.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dynamic_hat.actions_log import read_jsonl, write_jsonl
from dynamic_hat.app_core.logging_config import get_logger
from dynamic_hat.corpus import Corpus
from dynamic_hat.design_space import DesignSpace, SubConfig
from dynamic_hat.exceptions import ArtifactLoadError, ArtifactSaveError, DynamicHatError
from dynamic_hat.latency import LatencyDataset, LatencyPredictor, LatencySample
from dynamic_hat.runtime import OperatingLibrary

logger = get_logger(__name__)

FORMAT_VERSION = 1

PathLike = Union[str, Path]


def save_json(path: PathLike, payload: Any) -> Path:
    """Write JSON with a trailing newline; keys keep insertion order for byte-stable output."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
    except (OSError, TypeError, ValueError) as e:
        logger.error(f"Failed to write {path}: {e}")
        raise ArtifactSaveError(f"Failed to write artifact: {e}", file_path=str(path)) from e
    logger.debug(f"Wrote {path}")
    return path


def load_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.exists():
        raise ArtifactLoadError("Artifact file not found", file_path=str(path))
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON in {path}: {e}")
        raise ArtifactLoadError(f"Invalid JSON: {e}", file_path=str(path)) from e
    except OSError as e:
        raise ArtifactLoadError(f"Failed to read artifact: {e}", file_path=str(path)) from e


def _check_version(data: Dict[str, Any], path: PathLike) -> None:
    version = data.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ArtifactLoadError(f"Unsupported format_version {version}", file_path=str(path))


def _wrap(path: PathLike, loader):
    """Run a from_dict-style loader, converting domain errors to ArtifactLoadError."""
    try:
        return loader()
    except ArtifactLoadError:
        raise
    except (DynamicHatError, KeyError, TypeError, ValueError) as e:
        raise ArtifactLoadError(f"Malformed artifact: {e}", file_path=str(path)) from e


# ============================================================================
# Space and configs
# ============================================================================

def save_space(space: DesignSpace, path: PathLike) -> Path:
    return save_json(path, {"format_version": FORMAT_VERSION, **space.to_dict()})


def load_space(path: PathLike) -> DesignSpace:
    data = load_json(path)
    _check_version(data, path)
    return _wrap(path, lambda: DesignSpace.from_dict(data).check())


def save_config(cfg: SubConfig, path: PathLike) -> Path:
    return save_json(path, {"format_version": FORMAT_VERSION, **cfg.to_dict()})


def load_config(path: PathLike) -> SubConfig:
    data = load_json(path)
    _check_version(data, path)
    return _wrap(path, lambda: SubConfig.from_dict(data))


# ============================================================================
# Library and predictor
# ============================================================================

def save_library(library: OperatingLibrary, path: PathLike) -> Path:
    return save_json(path, library.to_dict())


def load_library(path: PathLike) -> OperatingLibrary:
    data = load_json(path)
    return _wrap(path, lambda: OperatingLibrary.from_dict(data))


def save_predictor(predictor: LatencyPredictor, path: PathLike) -> Path:
    return save_json(path, predictor.to_dict())


def load_predictor(path: PathLike) -> LatencyPredictor:
    data = load_json(path)
    _check_version(data, path)
    return _wrap(path, lambda: LatencyPredictor.from_dict(data))


# ============================================================================
# JSONL artifacts
# ============================================================================

def vocab_path_for(corpus_path: PathLike) -> Path:
    corpus_path = Path(corpus_path)
    return corpus_path.with_name(corpus_path.stem + ".vocab.json")


def save_corpus(corpus: Corpus, path: PathLike) -> Path:
    """One {src, tgt} line per pair plus a sidecar vocab JSON."""
    path = Path(path)
    rows = [{"format_version": FORMAT_VERSION, "src": list(src), "tgt": list(tgt)} for src, tgt in corpus.pairs]
    try:
        write_jsonl(path, rows)
    except OSError as e:
        raise ArtifactSaveError(f"Failed to write corpus: {e}", file_path=str(path)) from e
    save_json(vocab_path_for(path), {
        "format_version": FORMAT_VERSION,
        "vocab_size": corpus.vocab_size,
        "split": corpus.split,
        "itos": corpus.itos(),
        "mapping": list(corpus.mapping),
    })
    return path


def load_corpus(path: PathLike) -> Corpus:
    path = Path(path)
    vocab = load_json(vocab_path_for(path))
    _check_version(vocab, path)
    try:
        rows = read_jsonl(path)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactLoadError(f"Failed to read corpus: {e}", file_path=str(path)) from e

    def build() -> Corpus:
        for row in rows:
            _check_version(row, path)
        return Corpus(
            pairs=[(list(row["src"]), list(row["tgt"])) for row in rows],
            vocab_size=int(vocab["vocab_size"]),
            split=str(vocab.get("split", "train")),
            mapping=tuple(vocab.get("mapping", ())),
        ).check()

    return _wrap(path, build)


def save_latency_dataset(dataset: LatencyDataset, path: PathLike) -> Path:
    path = Path(path)
    try:
        write_jsonl(path, [sample.to_dict() for sample in dataset])
    except OSError as e:
        raise ArtifactSaveError(f"Failed to write latency dataset: {e}", file_path=str(path)) from e
    return path


def load_latency_dataset(path: PathLike) -> LatencyDataset:
    path = Path(path)
    try:
        rows = read_jsonl(path)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactLoadError(f"Failed to read latency dataset: {e}", file_path=str(path)) from e

    def build() -> LatencyDataset:
        samples = []
        for row in rows:
            _check_version(row, path)
            samples.append(LatencySample.from_dict(row))
        hardware = {s.hardware_id for s in samples}
        return LatencyDataset(samples, hardware.pop() if len(hardware) == 1 else "mixed")

    return _wrap(path, build)


# ============================================================================
# Pipeline manifest
# ============================================================================

@dataclass
class PipelineManifest:
    """Where every artifact of one pipeline run lives, plus the seeds that produced them."""
    hardware_id: str
    paths: Dict[str, str] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def path(self, name: str) -> Path:
        if name not in self.paths:
            raise ArtifactLoadError(f"Manifest has no '{name}' artifact")
        return Path(self.paths[name])

    def missing(self, names: Optional[List[str]] = None) -> List[str]:
        """Artifacts (all, or the named ones) whose files do not exist."""
        wanted = names if names is not None else list(self.paths)
        return [name for name in wanted if name not in self.paths or not Path(self.paths[name]).exists()]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineManifest":
        return cls(
            hardware_id=str(data["hardware_id"]),
            paths={str(k): str(v) for k, v in data.get("paths", {}).items()},
            seeds={str(k): int(v) for k, v in data.get("seeds", {}).items()},
            format_version=int(data.get("format_version", FORMAT_VERSION)),
        )


def save_manifest(manifest: PipelineManifest, path: PathLike) -> Path:
    return save_json(path, manifest.to_dict())


def load_manifest(path: PathLike) -> PipelineManifest:
    data = load_json(path)
    _check_version(data, path)
    return _wrap(path, lambda: PipelineManifest.from_dict(data))
