"""A one-dimensional walk through the whole pipeline.

The system is x' = -x on [-1, 1] with the unsafe set {|x| >= 1}. Here the Zubov
value function is known in closed form, V(x) = -log(1 - x^2) / 2, and with
beta(s) = 1 - exp(-2 s) the bounded version is simply W(x) = x^2. That makes it
a good place to see each stage doing what it should.

Run with:  python3 demos/01_one_dimensional.py
"""

# %%
import time

import numpy as np

from zubov_lbf import net as nn
from zubov_lbf import oracle, train, verify
from zubov_lbf.config import load_config
from zubov_lbf.system import linearize, scaled_field

cfg = load_config("1d")
s = cfg.system
print("field:", [str(e) for e in s.f], " obstacle:", [str(e) for e in s.obstacles])

# %% [markdown]
# The scaled field multiplies f by lam * (1 - h)^k, so it slows down as the
# state approaches the obstacle and stops on its boundary.

# %%
for x in (0.0, 0.5, 0.9, 0.99, 1.0):
    print(f"x={x:5.2f}  f~={scaled_field(s, np.array([x]))[0]: .5f}")

# %% [markdown]
# The oracle integrates the reversed, scaled dynamics and accumulates |x|^2.

# %%
xs = np.linspace(-0.9, 0.9, 7)
V, W, status, _ = oracle.label_points(s, xs[:, None])
for x, v, w in zip(xs, V, W):
    print(f"x={x: .2f}  V={v:.6f} (exact {-0.5 * np.log(1 - x * x):.6f})  W={w:.6f} (x^2={x * x:.6f})")

# %% [markdown]
# Train the preset network on the PDE residual plus oracle labels.

# %%
ds = oracle.generate_dataset(s, cfg.dataset.count, seed=cfg.seed, opts=cfg.integrator)
tc = cfg.train_config
t0 = time.perf_counter()
params, history = train.train(nn.init_params(tc.widths_for(1), cfg.seed), s, tc, ds)
print(f"trained {len(history)} epochs in {time.perf_counter() - t0:.0f}s, final loss {history.final['total']:.3e}")
grid = np.linspace(-0.9, 0.9, 181)[:, None]
print("max |W_net - x^2| on [-0.9, 0.9]:", float(np.max(np.abs(nn.forward(params, grid) - grid[:, 0] ** 2))))

# %% [markdown]
# Certify: the largest level c2 such that {W <= c2} is invariant, avoids the
# obstacle and is attracted to the origin, proved with interval branch and bound.

# %%
report = verify.bisect_levels(params, s, linearize(s), cfg.verify_config)
print(report.to_json())
print(f"certified interval: |x| <= {np.sqrt(report.c2):.4f} (the true safe set is |x| < 1)")
