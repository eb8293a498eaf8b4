"""
Attention transfer versus plain fine-tuning on a small training set
===================================================================

A three-block teacher learns the synthetic two-class task from 240
patients. Two-block students then train on only 100 of those patients,
either with cross-entropy alone (transfer learning) or with the teacher's
attention maps as an extra target (attention transfer). We compare the best
validation AUC and how much the validation curve jitters late in training.

    python demos/06_teacher_student.py            # three seeds, about 6 minutes
    python demos/06_teacher_student.py --quick    # one seed
"""

import argparse
from pathlib import Path

import numpy as np

from atx.desk import directional_run
from atx.experiments import compare_runs

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true", help="one seed instead of three")
parser.add_argument("--out", default=str(Path(__file__).parent / "out" / "teacher_student"))
args = parser.parse_args()

seeds = (0,) if args.quick else (0, 1, 2)
result = directional_run(args.out, seeds=seeds)
print(f"teacher validation AUC {result['teacher_val_auc']:.3f}")

for mode in ("transfer_learning", "attention_transfer"):
    r = result[mode]
    print(f"{mode:>19}: best val AUC {np.mean(r['best_val']):.4f}  late fluctuation {np.round(r['fluctuation'], 4)}")

# the same numbers as the comparison subcommand would print, plus curves.png
compare_runs(
    [result["transfer_learning"]["run_dir"], result["attention_transfer"]["run_dir"]],
    Path(args.out) / "comparison",
)
print("wrote", Path(args.out) / "comparison")
