"""
Run-time controller: switch the active SubTransformer when the latency constraint changes.

The bank stays resident; switching is a pure re-slice (inherit), so it costs
no training, no weight copy and no file I/O. Requests pick up the active view
at their start, so a switch never disturbs a translation in flight.
"""

from __future__ import annotations

import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, TextIO, Tuple, Union

from dynamic_hat.actions_log import emit_record
from dynamic_hat.app_core.logging_config import get_logger
from dynamic_hat.design_space import SubConfig
from dynamic_hat.elastic_model import SubModelView, SuperWeights, greedy_translate, inherit
from dynamic_hat.exceptions import (
    ArtifactLoadError,
    DynamicHatError,
    EmptyLibraryError,
    InvalidConfigError,
    RuntimeControlError,
    UnknownOperatingPointError,
)

logger = get_logger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class OperatingPoint:
    """A searched config with its measured latency and quality."""
    config: SubConfig
    measured_latency_ms: float
    val_loss: float
    bleu: Optional[float] = None
    constraint_ms: Optional[float] = None
    predicted_ms: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.measured_latency_ms > 0:
            raise RuntimeControlError("measured_latency_ms must be > 0",
                                      {"measured_latency_ms": self.measured_latency_ms})

    @property
    def n_decoder_layers(self) -> int:
        return self.config.n_decoder_layers

    def to_dict(self) -> Dict[str, Any]:
        return {
            "constraint_ms": self.constraint_ms,
            "config": self.config.to_dict(),
            "predicted_ms": self.predicted_ms,
            "measured_ms": self.measured_latency_ms,
            "val_loss": self.val_loss,
            "bleu": self.bleu,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OperatingPoint":
        measured = data.get("measured_ms", data.get("measured_latency_ms"))
        return cls(
            config=SubConfig.from_dict(data["config"]),
            measured_latency_ms=float(measured),
            val_loss=float(data["val_loss"]),
            bleu=None if data.get("bleu") is None else float(data["bleu"]),
            constraint_ms=None if data.get("constraint_ms") is None else float(data["constraint_ms"]),
            predicted_ms=None if data.get("predicted_ms") is None else float(data["predicted_ms"]),
        )


@dataclass
class OperatingLibrary:
    """Operating points sorted by measured latency, one per distinct config."""
    points: List[OperatingPoint]
    gaps: List[float] = field(default_factory=list)
    hardware_id: str = "unknown"

    def __post_init__(self) -> None:
        seen = set()
        unique = []
        for point in self.points:
            key = point.config.key()
            if key not in seen:
                seen.add(key)
                unique.append(point)
        unique.sort(key=lambda p: (p.measured_latency_ms, p.config.key()))
        self.points = unique
        self.gaps = sorted(float(g) for g in self.gaps)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[OperatingPoint]:
        return iter(self.points)

    def __contains__(self, point: object) -> bool:
        return isinstance(point, OperatingPoint) and any(p.config == point.config for p in self.points)

    def find(self, config_hash: str) -> OperatingPoint:
        for point in self.points:
            if point.config.config_hash() == config_hash:
                return point
        raise UnknownOperatingPointError("No operating point with that config", config_hash=config_hash)

    def top_configs(self, k: int = 5) -> List[SubConfig]:
        """The k configs with the lowest validation loss (ties: lower latency)."""
        ranked = sorted(self.points, key=lambda p: (p.val_loss, p.measured_latency_ms))
        return [p.config for p in ranked[:k]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "hardware_id": self.hardware_id,
            "points": [p.to_dict() for p in self.points],
            "gaps": list(self.gaps),
        }

    @classmethod
    def from_dict(cls, data: Union[Dict[str, Any], List[Dict[str, Any]]]) -> "OperatingLibrary":
        """Accepts the library object or a bare array of points."""
        try:
            if isinstance(data, list):
                return cls([OperatingPoint.from_dict(p) for p in data])
            version = data.get("format_version", FORMAT_VERSION)
            if version != FORMAT_VERSION:
                raise ArtifactLoadError(f"Unsupported library format_version {version}")
            return cls(
                points=[OperatingPoint.from_dict(p) for p in data["points"]],
                gaps=list(data.get("gaps", [])),
                hardware_id=str(data.get("hardware_id", "unknown")),
            )
        except (KeyError, TypeError, ValueError, InvalidConfigError, RuntimeControlError) as e:
            raise ArtifactLoadError(f"Malformed operating library: {e}") from e


def select_point(library: OperatingLibrary, constraint_ms: float) -> Tuple[OperatingPoint, bool]:
    """Lowest val_loss among points meeting the constraint; else the fastest point, flagged."""
    if len(library) == 0:
        raise EmptyLibraryError("Operating library is empty")
    feasible = [p for p in library.points if p.measured_latency_ms <= constraint_ms]
    if feasible:
        return min(feasible, key=lambda p: (p.val_loss, p.measured_latency_ms)), False
    return min(library.points, key=lambda p: p.measured_latency_ms), True


@dataclass
class ControllerEvent:
    ts: float
    kind: str
    constraint_ms: Optional[float]
    config_hash: str
    n_decoder_layers: int
    measured_latency_ms: float
    switch_time_ms: float
    violation: bool
    switched: bool
    first_request_ms: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def replay_active_configs(events: Sequence[Union[ControllerEvent, Dict[str, Any]]]) -> List[str]:
    """Active config hash after each logged event."""
    hashes = []
    for event in events:
        hashes.append(event["config_hash"] if isinstance(event, dict) else event.config_hash)
    return hashes


class RuntimeController:
    """Holds the resident bank and operating library; serves translations through the active view."""

    def __init__(self, bank: SuperWeights, library: OperatingLibrary, event_stream: Optional[TextIO] = None):
        if len(library) == 0:
            raise EmptyLibraryError("Operating library is empty")
        self.bank = bank
        self.library = library
        self.events: List[ControllerEvent] = []
        self.event_stream = event_stream
        self._lock = threading.Lock()
        self._first_request_pending = False

        # start on the fastest point
        initial = library.points[0]
        switch_ms = self._install(initial)
        self._record("init", None, initial, switch_ms, violation=False, switched=True)

    @property
    def active_point(self) -> OperatingPoint:
        with self._lock:
            return self._active_point

    @property
    def active_view(self) -> SubModelView:
        with self._lock:
            return self._active_view

    def _install(self, point: OperatingPoint) -> float:
        start = time.perf_counter_ns()
        view = inherit(self.bank, point.config)
        with self._lock:
            self._active_point = point
            self._active_view = view
            self._first_request_pending = True
        return (time.perf_counter_ns() - start) / 1e6

    def _record(self, kind: str, constraint_ms: Optional[float], point: OperatingPoint, switch_ms: float,
                violation: bool, switched: bool, first_request_ms: Optional[float] = None) -> ControllerEvent:
        event = ControllerEvent(
            ts=time.time(),
            kind=kind,
            constraint_ms=constraint_ms,
            config_hash=point.config.config_hash(),
            n_decoder_layers=point.n_decoder_layers,
            measured_latency_ms=point.measured_latency_ms,
            switch_time_ms=switch_ms,
            violation=violation,
            switched=switched,
            first_request_ms=first_request_ms,
        )
        self.events.append(event)
        if self.event_stream is not None:
            emit_record(self.event_stream, {"event": kind, **event.to_dict()})
        return event

    def switch_active(self, point: OperatingPoint) -> float:
        """Re-slice the bank for `point` and install it; returns the switch time in ms."""
        if point not in self.library:
            raise UnknownOperatingPointError("Point is not in the operating library",
                                             config_hash=point.config.config_hash())
        switch_ms = self._install(point)
        logger.debug(f"Switched to {point.config.short_repr()} in {switch_ms:.3f} ms")
        return switch_ms

    def handle_constraint_event(self, constraint_ms: float) -> ControllerEvent:
        point, violation = select_point(self.library, constraint_ms)
        switched = point.config != self.active_point.config
        switch_ms = self.switch_active(point) if switched else 0.0
        if violation:
            logger.warning(f"No operating point meets {constraint_ms} ms; using the fastest "
                           f"({point.measured_latency_ms} ms)")
        return self._record("constraint", constraint_ms, point, switch_ms, violation, switched)

    def translate_current(self, src_tokens: Sequence[int], max_len: Optional[int] = None) -> List[int]:
        """Greedy translation through the view active when the request starts."""
        with self._lock:
            view = self._active_view
            point = self._active_point
            first = self._first_request_pending
            self._first_request_pending = False
        start = time.perf_counter_ns()
        output = greedy_translate(view, src_tokens, max_len if max_len is not None else len(src_tokens) + 2)
        if first:
            elapsed_ms = (time.perf_counter_ns() - start) / 1e6
            self._record("first_request", None, point, 0.0, violation=False, switched=False,
                         first_request_ms=elapsed_ms)
        return output

    def stats(self) -> Dict[str, Any]:
        point = self.active_point
        switches = [e.switch_time_ms for e in self.events if e.kind == "constraint" and e.switched]
        return {
            "active_config_hash": point.config.config_hash(),
            "active_decoder_layers": point.n_decoder_layers,
            "active_latency_ms": point.measured_latency_ms,
            "n_events": len(self.events),
            "n_switches": len(switches),
            "n_violations": sum(1 for e in self.events if e.violation),
            "max_switch_ms": max(switches, default=0.0),
            "last_first_request_ms": next((e.first_request_ms for e in reversed(self.events)
                                           if e.kind == "first_request"), None),
            "library_size": len(self.library),
        }


def serve_commands(controller: RuntimeController, lines: Iterable[str], out: TextIO) -> int:
    """Line protocol: set-constraint <ms> | translate <ids...> | stats | quit.

    Every command answers with one JSON line on `out`. When the controller
    streams its events to `out` as well, those event lines stand in for the
    constraint replies. Returns the number of commands processed.
    """
    handled = 0
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        command, *args = line.split()
        handled += 1
        try:
            if command == "quit":
                emit_record(out, {"event": "quit"})
                break
            elif command == "set-constraint":
                if len(args) != 1:
                    raise RuntimeControlError("usage: set-constraint <ms>")
                event = controller.handle_constraint_event(float(args[0]))
                # a controller streaming to `out` has already written the event
                if controller.event_stream is not out:
                    emit_record(out, {"event": "constraint", **event.to_dict()})
            elif command == "translate":
                tokens = [int(a) for a in args]
                output = controller.translate_current(tokens)
                emit_record(out, {"event": "translation", "source": tokens, "output": output,
                                  "config_hash": controller.active_point.config.config_hash()})
            elif command == "stats":
                emit_record(out, {"event": "stats", **controller.stats()})
            else:
                raise RuntimeControlError(f"unknown command {command!r}")
        except DynamicHatError as e:
            emit_record(out, {"event": "error", **e.to_dict()})
        except ValueError as e:
            emit_record(out, {"event": "error", "error": "ValueError", "message": str(e), "context": {}})
    return handled
