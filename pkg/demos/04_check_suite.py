"""Run the whole check suite on a random two-dimensional model.

Each check returns a report with its statistic, tolerance and seed; the
same seed reproduces the same reports.  Takes about half a minute.
"""
import sys

import numpy as np

from mvlq import verify
from mvlq.model import random_model

model = random_model(np.random.default_rng(7), n=2, k=1)
reports = verify.run_all(model, seed=int(sys.argv[1]) if len(sys.argv) > 1 else 0)
sys.stdout.write(verify.summary_text(reports))
verify.write_reports_csv(reports, "checks.csv")
