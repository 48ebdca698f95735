# %% [markdown]
# # Row-sparse factors when p exceeds T
#
# 100 series, 80 observations.  Each of C, R and P has only 5 nonzero rows.
# The L1 fit seeds the spectral start, and gradient descent keeps the
# largest rows of every factor after each step.

# %%
import numpy as np

from varcs import DgpSpec, GdConfig, SparsityLevels, fit_sparse_var1, fit_var1, simulate
from varcs.estimator import lagged_design, Problem
from varcs.initializer import default_lambda, reduced_rank_var1, sparse_init_var1, spectral_init_var1
from varcs.simulator import make_var1_cs_dgp

rng = np.random.default_rng(11)
truth, a = make_var1_cs_dgp(DgpSpec(kind="var1_cs", p=100, T=80, ranks=(3,), d=1, row_sparsity=5), rng)
y, x = lagged_design(simulate(a, 80, None, 200, rng), 1)
prob = Problem(y, x)
print("default lambda", round(default_lambda(y, x, prob), 4))

# %%
levels = SparsityLevels(8, 8, 8)
init = sparse_init_var1(y, x, 3, 1, levels=levels, problem=prob)
sparse = fit_sparse_var1(y, x, levels, init, GdConfig(max_iters=2000), problem=prob)
dense = fit_var1(y, x, spectral_init_var1(reduced_rank_var1(y, x, 3, problem=prob), 1),
                 GdConfig(max_iters=2000), problem=prob)
print("error sparse", round(float(np.linalg.norm(sparse.coefficient - a)), 3))
print("error dense ", round(float(np.linalg.norm(dense.coefficient - a)), 3))

# %% Which true rows were kept?
for name in ("c", "r", "p_"):
    true_rows = set(np.flatnonzero(np.linalg.norm(getattr(truth, name), axis=1)))
    kept = set(np.flatnonzero(np.linalg.norm(getattr(sparse.params, name), axis=1)))
    print(name, "true rows kept:", len(true_rows & kept), "of", len(true_rows))
