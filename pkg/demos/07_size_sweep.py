"""
How much does the teacher help as data grows?
=============================================

The teacher learns from a separate 400-patient source corpus. Students are
trained on nested subsets of 50, 200 and 800 target patients, and each
subset is scored on a fixed 250-patient test split. The two curves show how
the gap between attention transfer and fine-tuning changes with size.

    python demos/07_size_sweep.py           # three seeds, about 8 minutes
    python demos/07_size_sweep.py --quick   # one seed, sizes 50 and 200
"""

import argparse
from pathlib import Path

from atx.desk import size_trend_run

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true")
parser.add_argument("--out", default=str(Path(__file__).parent / "out" / "size_sweep"))
args = parser.parse_args()

seeds, sizes = ((0,), (50, 200)) if args.quick else ((0, 1, 2), (50, 200, 800))
result = size_trend_run(args.out, seeds=seeds, sizes=sizes)
print(f"source-trained teacher validation AUC {result['teacher_val_auc']:.3f}")
for mode, rows in result["curves"].items():
    print(mode)
    for row in rows:
        print(f"  {row['size']:>4} patients: test AUC {row['mean']:.3f}")
print("plot:", Path(args.out) / "sweep" / "size_sweep.png")
