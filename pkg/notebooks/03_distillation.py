"""Compress the teacher into compact students with temperature-softened targets."""
# %%
import math

import numpy as np

from battkd import pipeline
from battkd.distill import KDConfig, kd_soft_loss, kd_total_loss
from battkd.evaluation import comparison_table
from battkd.experts import KINDS, build_expert
from battkd.timer import TimerModel

# %% The loss on a two-step toy: teacher [0, ln 3], student [0, 0]
t = np.array([[0.0, math.log(3.0)]], np.float32)
s = np.zeros((1, 2), np.float32)
print("soft loss at T=1:", kd_soft_loss(t, s, 1.0).data.item())
total, soft, hard = kd_total_loss(s, t, np.array([[0.2, -0.2]], np.float32), 1.0, 0.3)
print("total at alpha=0.3:", total.data.item())

# %% Student sizes relative to the full-size teacher
teacher_size = TimerModel().num_values()
for kind in KINDS:
    n = build_expert(kind).num_values()
    print(f"{kind:12s} {n:6d} values ({100 * n / teacher_size:.1f}% of the teacher)")

# %% Vanilla vs distilled on station CCCV windows, evaluated on CC and CCCV
cfg = pipeline.PipelineConfig(
    data=pipeline.DataConfig(pool_cells=4, pool_cycles=600, generic_series=150),
    pretrain=pipeline.PretrainConfig(epochs=2),
    distill=KDConfig(epochs=4, lr=1e-4, train_stride=4),
)
suite = pipeline.make_suite(2, cfg.data)
base, _ = pipeline.build_base_teacher(2, suite, cfg)
teacher, _ = pipeline.adapt_teacher(base, list(suite.pool.values()), cfg, seed=2)
reports, _ = pipeline.compare_regimes(teacher, suite, ("LinearDecomp", "SegRec"), cfg, seed=2)
print(comparison_table(pipeline.evaluate_teacher(teacher, suite) + reports))
