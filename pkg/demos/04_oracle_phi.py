"""
How many queries does a turn need?
==================================

Sweep phi from 1 to 5 on the toy data, let the oracle pick the best phi per
turn, and look at where the gains come from.
"""

import json
import tempfile
from importlib import resources
from pathlib import Path

from mqsearch import load_qrels, load_run, paired_t_test
from mqsearch.cli import cmd_sweep, load_config
from mqsearch.evaluation import ndcg_at_k

toy = Path(str(resources.files("mqsearch") / "data" / "toy"))
out = Path(tempfile.mkdtemp(prefix="mqsearch-demo-"))
cfg = load_config(toy / "config.ini", {"paths.output": str(out)})
result = cmd_sweep(cfg)

for phi, report in result["reports"].items():
    print(f"phi={phi}  nDCG@3={report.aggregates['ndcg@3']:.4f}  R@100={report.aggregates['recall@100']:.4f}")
oracle = result["oracle"]["report"]
print(f"oracle  nDCG@3={oracle.aggregates['ndcg@3']:.4f}")

selection = result["oracle"]["selection"]
print("phi* per turn:", selection.phi_star)

data = json.loads((out / "reports" / "mq4cs_oracle.json").read_text())
print("phi* distribution:", data["phi_distribution"])
print("easy vs complex:", json.dumps(data["complexity_groups"], indent=1))

# Is the oracle significantly better than always asking for five queries?
qrels = load_qrels(toy / "qrels.txt")
a = ndcg_at_k(load_run(out / "runs" / "mq4cs_oracle.run"), qrels, 3)
b = ndcg_at_k(load_run(out / "runs" / "mq4cs_phi5.run"), qrels, 3)
print(paired_t_test(a, b))
print("artifacts in", out)
