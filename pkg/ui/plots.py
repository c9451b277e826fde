from pathlib import Path
from typing import Sequence

import pandas as pd


def gnuplot_script(csv_name: str, columns: Sequence[str], x_column: str, y_columns: Sequence[str],
                   title: str) -> str:
    """gnuplot source plotting y_columns against x_column from a comma separated file."""
    missing = [c for c in [x_column, *y_columns] if c not in columns]
    if missing:
        raise ValueError(f"columns not in {csv_name}: {missing}")
    index = {name: i + 1 for i, name in enumerate(columns)}
    log_axes = "set logscale xy\n" if x_column == "n" else ""
    curves = ", \\\n     ".join(
        f"'{csv_name}' using {index[x_column]}:{index[y]} with linespoints title '{y}'" for y in y_columns
    )
    return (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        f"set title '{title}'\n"
        f"set xlabel '{x_column}'\n"
        f"{log_axes}"
        f"set terminal pngcairo size 900,600\n"
        f"set output '{title}.png'\n"
        f"plot {curves}\n"
    )


def write_gnuplot_script(csv_path: Path, x_column: str, y_columns: Sequence[str], title: str) -> Path:
    """Write <csv stem>.gp next to the CSV and return its path."""
    csv_path = Path(csv_path)
    columns = list(pd.read_csv(csv_path, nrows=0).columns)
    script = csv_path.with_suffix(".gp")
    script.write_text(gnuplot_script(csv_path.name, columns, x_column, y_columns, title), encoding="utf-8")
    return script
