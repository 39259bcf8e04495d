"""Reversed Van der Pol oscillator with two circular obstacles.

The stable limit cycle of the reversed oscillator bounds the domain of
attraction; two disks of radius 0.25 centred at (1, 1) and (-1, -1) are unsafe.
We train a network, certify one of its sublevel sets, and compare the certified
area with the best ellipse a quadratic Lyapunov function can certify.

Run with:  python3 demos/02_van_der_pol.py [epochs]
(the preset trains for 10^4 epochs, a few minutes on one core)
"""

# %%
import dataclasses
import sys
import time

import numpy as np

from zubov_lbf import net as nn
from zubov_lbf import oracle, train, verify
from zubov_lbf.config import load_config
from zubov_lbf.system import h_max, linearize

cfg = load_config("vdp2")
s = cfg.system
lin = linearize(s)
print("A =", lin.A.tolist())
print("P =", np.round(lin.P, 6).tolist())

# %% [markdown]
# Label a few thousand random states. Points in the obstacles or outside the
# domain of attraction get W = 1.

# %%
t0 = time.perf_counter()
ds = oracle.generate_dataset(s, cfg.dataset.count, seed=cfg.seed, opts=cfg.integrator)
print(f"oracle: {ds.counts} in {time.perf_counter() - t0:.1f}s")

# %%
tc = cfg.train_config
if len(sys.argv) > 1:
    tc = dataclasses.replace(tc, epochs=int(sys.argv[1]))
t0 = time.perf_counter()
params, history = train.train(nn.init_params(tc.widths_for(2), cfg.seed), s, tc, ds)
print(f"trained {len(history)} epochs in {time.perf_counter() - t0:.0f}s")
print("final loss components:", {k: f"{history.final[k]:.2e}" for k in ("total", "res", "bc", "zero", "data")})

# %%
t0 = time.perf_counter()
report = verify.bisect_levels(params, s, lin, cfg.verify_config)
print(f"status {report.status.value}: c1={report.c1:.4f} c2={report.c2:.4f} "
      f"rho_q={report.rho_q} ({time.perf_counter() - t0:.1f}s)")

# %% [markdown]
# Compare areas on a 201 x 201 grid over the region of interest.

# %%
G = oracle.grid_points(s.roi, 201)
cell = np.prod((s.roi.hi - s.roi.lo) / 200)
Wn = nn.forward(params, G)
q = np.einsum("ij,jk,ik->i", G, lin.P, G)
area_n = np.sum(Wn <= report.c2) * cell if report.certified else 0.0
area_q = np.sum(q <= (report.rho_q or 0.0)) * cell
print(f"neural certified area    {area_n:.3f}")
print(f"quadratic ellipse area   {area_q:.3f}")

# %% [markdown]
# A coarse text picture: 'o' quadratic ellipse, '#' the rest of the neural
# certified set, 'X' obstacles.

# %%
rows = []
for y in np.linspace(s.roi.hi[1], s.roi.lo[1], 29):
    line = ""
    for x in np.linspace(s.roi.lo[0], s.roi.hi[0], 61):
        p = np.array([[x, y]])
        if h_max(s, p[0]) >= 1:
            line += "X"
        elif p[0] @ lin.P @ p[0] <= (report.rho_q or 0):
            line += "o"
        elif report.certified and nn.forward(params, p)[0] <= report.c2:
            line += "#"
        else:
            line += "."
    rows.append(line)
print("\n".join(rows))
