"""Markdown operating-point reports rendered from the packaged Jinja2 templates."""

from pathlib import Path
from typing import Any, Dict, List, Optional

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from dynamic_hat.app_core.logging_config import get_logger
from dynamic_hat.runtime import OperatingLibrary, OperatingPoint

logger = get_logger(__name__)

TEMPLATE_PATH = Path(__file__).resolve().parent.parent / "templates"
LIBRARY_TEMPLATE = "library_report.md.j2"


def jinja_env(template_path: Path = TEMPLATE_PATH) -> Environment:
    return Environment(
        loader=FileSystemLoader(str(template_path)),
        autoescape=False,
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )


def _fmt(value: Optional[float], digits: int) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def point_row(point: OperatingPoint) -> Dict[str, Any]:
    cfg = point.config
    return {
        "config_hash": cfg.config_hash(),
        "constraint": _fmt(point.constraint_ms, 0),
        "latency": _fmt(point.measured_latency_ms, 2),
        "predicted": _fmt(point.predicted_ms, 2),
        "bleu": _fmt(point.bleu, 2),
        "val_loss": _fmt(point.val_loss, 4),
        "layers": cfg.n_decoder_layers,
        "embed": f"{cfg.encoder_embed_dim}/{cfg.decoder_embed_dim}",
        "dec_ffn": ",".join(str(f) for f in cfg.decoder_ffn_dims),
        "attn": ",".join(str(a) for a in cfg.enc_dec_attn),
    }


def library_context(library: OperatingLibrary, label: str) -> Dict[str, Any]:
    rows: List[Dict[str, Any]] = [point_row(p) for p in library]
    return {
        "label": label,
        "hardware_id": library.hardware_id,
        "rows": rows,
        "gaps": [_fmt(g, 0) for g in library.gaps],
    }


def render_library_report(library: OperatingLibrary, compare: Optional[OperatingLibrary] = None,
                          title: str = "Operating points", labels: tuple = ("original", "reduced")) -> str:
    """Render one library (or an original vs reduced pair) as a Markdown table."""
    libraries = [library_context(library, labels[0])]
    if compare is not None:
        libraries.append(library_context(compare, labels[1]))
    template = jinja_env().get_template(LIBRARY_TEMPLATE)
    text = template.render(title=title, libraries=libraries, comparison=compare is not None)
    logger.debug(f"Rendered report for {sum(len(lib['rows']) for lib in libraries)} operating points")
    return text
