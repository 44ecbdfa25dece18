"""Write the reference datasets as plain CSV files under ``data/``.

Sources are offline copies bundled with pip-installable packages:

* ``airline.csv``  from ``rdatasets`` (R ``AirPassengers``), 144 monthly rows.
* ``co2.csv``      from ``statsmodels`` (Mauna Loa weekly record), averaged to
  monthly means, 1958-03 to 2001-12; months without data are dropped.
* ``concrete.csv`` from ``rdatasets`` (``modeldata::concrete``), 1030 rows.
* ``winequality-red.csv`` is not bundled by any of these packages. Place the
  UCI file (semicolon separated, as distributed) at ``data/winequality-red.csv``
  and rerun this script to convert it to comma-separated form.

Usage::

    pip install rdatasets statsmodels
    python scripts/fetch_datasets.py [--dest data]
"""

import argparse
import csv
import sys
from pathlib import Path


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")


def airline(dest):
    import rdatasets

    df = rdatasets.data("datasets", "AirPassengers")
    _write(dest / "airline.csv", ["time", "passengers"],
           [[repr(float(t)), repr(float(v))] for t, v in zip(df["time"], df["value"])])


def co2(dest):
    from statsmodels.datasets import co2 as sm_co2

    s = sm_co2.load_pandas().data["co2"]
    monthly = s.resample("MS").mean().dropna()
    rows = [[repr(round(d.year + (d.month - 1) / 12.0, 6)), repr(round(float(v), 6))]
            for d, v in monthly.items()]
    _write(dest / "co2.csv", ["time", "co2"], rows)


def concrete(dest):
    import rdatasets

    df = rdatasets.data("modeldata", "concrete")
    cols = [c for c in df.columns if c not in ("compressive_strength", "rownames")] + ["compressive_strength"]
    _write(dest / "concrete.csv", cols,
           [[repr(float(v)) for v in row] for row in df[cols].itertuples(index=False)])


def wine(dest):
    src = dest / "winequality-red.csv"
    if not src.exists():
        print(f"skipping wine: {src} not found (see module docstring)", file=sys.stderr)
        return
    text = src.read_text(encoding="utf-8")
    if ";" not in text.splitlines()[0]:
        print(f"{src} already comma separated")
        return
    rows = list(csv.reader(text.splitlines(), delimiter=";"))
    header = [h.strip().replace(" ", "_") for h in rows[0]]
    _write(src, header, rows[1:])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dest", default=str(Path(__file__).resolve().parent.parent / "data"))
    args = ap.parse_args(argv)
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    for fn in (airline, co2, concrete, wine):
        try:
            fn(dest)
        except ImportError as exc:
            print(f"skipping {fn.__name__}: {exc}", file=sys.stderr)


if __name__ == "__main__":
    main()
