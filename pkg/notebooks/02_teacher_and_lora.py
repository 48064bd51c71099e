"""Pretrain a small Timer teacher, adapt it with LoRA and check the adapter algebra."""
# %%
import copy

import numpy as np

from battkd import lora, pipeline
from battkd.evaluation import evaluate_protocol
from battkd.timer import TimerConfig
from battkd.train import FinetuneConfig

# a reduced configuration so the walk-through finishes in about a minute
cfg = pipeline.PipelineConfig(
    data=pipeline.DataConfig(pool_cells=4, pool_cycles=600, station_cells=4, generic_series=150),
    timer=TimerConfig(d_model=32, n_heads=4, d_ff=64),
    pretrain=pipeline.PretrainConfig(epochs=3),
    finetune=FinetuneConfig(epochs=2, train_stride=8),
)
suite = pipeline.make_suite(1, cfg.data)

# %% Generic pretraining: next-token regression on non-battery curves
base, hist = pipeline.build_base_teacher(1, suite, cfg)
print("pretraining loss by epoch", [round(h["loss"], 5) for h in hist])

# %% Inject rank-8 adapters into q, k and v; the backbone is frozen
adapted = lora.inject(copy.deepcopy(base), cfg.lora, seed=1)
print(f"trainable fraction {lora.trainable_fraction(adapted):.4f}")
x = suite.station.series[0].capacity[:96]
x = (x - x.min()) / (x.max() - x.min())
assert np.array_equal(adapted.predict(x), base.predict(x)), "zero-initialised B"

# %% Fine-tune on the four-family pool with the trend penalty
teacher, ft = pipeline.adapt_teacher(base, list(suite.pool.values()), cfg, seed=1)
for row in ft:
    print(f"epoch {row['epoch']}: mse {row['mse']:.5f} trend {row['trend']:.4f}")

# %% Merged weights give the same forecasts
merged = lora.merge(copy.deepcopy(teacher))
print("merge max-abs", float(np.max(np.abs(merged.predict(x) - teacher.predict(x)))))

# %% Station accuracy before and after adaptation
for name, m in (("base", base), ("adapted", teacher)):
    for proto in ("CC", "CCCV"):
        r = evaluate_protocol(m, suite.station, proto)
        print(f"{name:8s} {proto:5s} MAE {r.mae:.4f} RMSE {r.rmse:.4f} MVR {r.mvr:.3f}")
