"""CSV reports with a `# key = value` preamble carrying the full configuration and seed."""

import io
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, TextIO, Tuple, Union

import pandas as pd
from pydantic import BaseModel

from app.log import get_logger

logger = get_logger("report_writer")

HEADER_PREFIX = "# "


def rows_to_frame(rows: Iterable[BaseModel]) -> pd.DataFrame:
    """One column per schema field, one row per model."""
    return pd.DataFrame([row.model_dump() for row in rows])


def format_header(items: Iterable[Tuple[str, Any]]) -> str:
    """Render `# key = value` lines; values are JSON so they parse back losslessly."""
    return "".join(f"{HEADER_PREFIX}{key} = {json.dumps(value)}\n" for key, value in items)


def write_report(
    frame: pd.DataFrame,
    header: Iterable[Tuple[str, Any]],
    out: Union[str, Path, TextIO, None] = None,
) -> str:
    """Write the preamble followed by the CSV body.

    Args:
        frame: Report rows
        header: Key/value pairs for the preamble (config, seed, derived constants)
        out: Destination path or open text stream; only the text is returned when None

    Returns:
        The full report text
    """
    text = format_header(header) + frame.to_csv(index=False, lineterminator="\n")
    if isinstance(out, (str, Path)):
        target = Path(out)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
        logger.info("report_written", path=str(target), rows=len(frame))
    elif out is not None:
        out.write(text)
    return text


def read_report(source: Union[str, Path, TextIO]) -> Tuple[Dict[str, Any], pd.DataFrame]:
    """Parse a report back into its preamble and rows."""
    text = Path(source).read_text() if isinstance(source, (str, Path)) else source.read()
    header: Dict[str, Any] = {}
    body: List[str] = []
    for line in text.splitlines(keepends=True):
        if line.startswith(HEADER_PREFIX) and not body:
            key, _, value = line[len(HEADER_PREFIX):].partition(" = ")
            header[key.strip()] = json.loads(value)
        else:
            body.append(line)
    csv_text = "".join(body)
    frame = pd.read_csv(io.StringIO(csv_text)) if csv_text.strip() else pd.DataFrame()
    return header, frame


def write_gnuplot_script(
    csv_path: Union[str, Path],
    script_path: Union[str, Path],
    title: str = "inclusion frequency by distance",
    image_path: Optional[str] = None,
) -> str:
    """gnuplot script plotting a sampling-probability report.

    Draws the target curve, the guaranteed lower bound and the empirical
    frequency with standard-error bars against the bin mid-distance.
    """
    image = image_path or str(Path(csv_path).with_suffix(".png"))
    script = "\n".join(
        [
            "set datafile separator ','",
            "set key autotitle columnhead top right",
            f"set title {json.dumps(title)}",
            "set xlabel 'distance to query'",
            "set ylabel 'inclusion probability'",
            "set xrange [0:2]",
            "set yrange [0:*]",
            "set terminal pngcairo size 900,600",
            f"set output {json.dumps(image)}",
            f"plot {json.dumps(str(csv_path))} using 'mid_distance':'target' with lines lw 2, \\",
            "     '' using 'mid_distance':'lower_bound' with lines dt 2, \\",
            "     '' using 'mid_distance':'frequency':'standard_error' with yerrorbars pt 7 ps 0.5",
            "",
        ]
    )
    Path(script_path).write_text(script)
    return script
