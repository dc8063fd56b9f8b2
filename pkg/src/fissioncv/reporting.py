"""CSV output shared by the drivers: a header row, data rows, and a trailing provenance comment."""

import csv

from fissioncv import __version__


def provenance(master_seed) -> str:
    return f"seed={master_seed}, version={__version__}"


def format_cell(v):
    return repr(float(v)) if isinstance(v, float) else v


def write_rows(fh, header, rows, master_seed) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    fh.write(f"# {provenance(master_seed)}\n")


def write_rows_csv(path, header, rows, master_seed) -> None:
    with open(path, "w", newline="") as fh:
        write_rows(fh, header, rows, master_seed)


def read_rows_csv(path):
    """Rows of a CSV written by :func:`write_rows_csv` as dicts, comment lines skipped."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
