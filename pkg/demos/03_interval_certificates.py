"""The verification building blocks on their own.

Interval arithmetic gives guaranteed bounds of an expression over a box. Branch
and bound splits boxes until every piece is either refuted or small enough to
count as a counterexample.
"""

# %%
import numpy as np

from zubov_lbf import expr, verify
from zubov_lbf.interval import Box, Interval
from zubov_lbf.system import SystemSpec, linearize
from zubov_lbf.transform import BetaFamily

e = expr.parse("x1 - (1 - x1^2)*x2", 2)
box = Box.from_bounds([[0.0, 1.0], [-1.0, 1.0]])
print(f"{e} over {box.lo.tolist()}..{box.hi.tolist()} lies in {expr.interval_eval(e, box)}")
print("d/dx1:", expr.diff(e, 0))

# %% [markdown]
# Enclosures overestimate when a variable appears twice; splitting the box helps.

# %%
x = Interval(-1.0, 1.0)
print("x*x on [-1, 1]:", x * x, "  x^2:", x**2)

def refutes_negative_square(B):
    d = B.dims[0]
    return (d * d).lo > -0.5

res = verify.branch_and_bound(refutes_negative_square, Box.from_bounds([[-1, 1]]))
print("x*x > -0.5 on [-1, 1]:", res.outcome.value, "after", res.boxes, "boxes")

# %% [markdown]
# A false claim produces a counterexample box.

# %%
def refutes_small_norm(B):
    d = B.dims
    return (d[0] ** 2 + d[1] ** 2).lo >= 0.01

res = verify.branch_and_bound(refutes_small_norm, Box.from_bounds([[-1, 1], [-1, 1]]), name="small-norm")
print("x1^2 + x2^2 >= 0.01 on [-1, 1]^2:", res.outcome.value, res.counterexample())

# %% [markdown]
# Near the origin the linearization governs. The inner-ball check bounds the
# Jacobian's deviation over a ball and shows the quadratic x'Px decreases there.

# %%
s = SystemSpec.from_strings(["-x2", "x1 - (1 - x1^2)*x2"],
                            ["1.25 - ((x1-1)^2 + (x2-1)^2)/0.25", "1.25 - ((x1+1)^2 + (x2+1)^2)/0.25"],
                            [[-2.5, 2.5], [-3.5, 3.5]], lam=0.1, beta=BetaFamily("tanh", 0.1))
lin = linearize(s)
for r0 in (0.05, 0.1, 0.3, 1.0):
    inner = verify.verify_inner_quadratic(s, lin, r0)
    print(f"r0={r0:4.2f}  certified={inner.certified}  C={inner.C:.4f}  rho={inner.rho:.5f}")
print("largest certified quadratic level:", verify.quadratic_baseline(s, lin, verify.VerifyConfig()))
