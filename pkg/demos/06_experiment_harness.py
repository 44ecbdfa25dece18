"""
End-to-end experiments
======================

The harness reads an INI config, runs one inference scheme and writes a
run bundle. Bundles that share a dataset and split can be compared in a
table. The same steps are available as ``fbgpr run`` and
``fbgpr compare``.

Run from the repository root after ``python scripts/fetch_datasets.py``.
"""

import tempfile
from pathlib import Path

from fbgpr.harness import compare_schemes, load_config, run_experiment

config = Path("configs/airline.ini")
out = Path(tempfile.mkdtemp(prefix="fbgpr-demo-"))

bundles = []
for scheme, extra in [
    ("ml2", {}),
    # a short mean-field run keeps the demo quick
    ("vi-meanfield", {"vi.max_iterations": "300"}),
]:
    cfg = load_config(config, {"scheme.name": scheme, "output.dir": str(out), **extra})
    bundles.append(run_experiment(cfg))
    print("wrote", bundles[-1])

rows, table = compare_schemes(bundles)
print(table)
