# coding: utf-8
# # Cluster distance matrices seen through a query
#
# The server also sees which positions a query discloses. Restricting the
# stored codes to those positions gives a k x k matrix of mean distances
# between clusters; a diagonal much smaller than the off-diagonal means the
# clusters are visible.

# %%
import numpy as np

from stcpriv.experiments import (ExperimentConfig, clustered_setup, fig7_settings, run_table1_fig7,
                                 table1_settings)

cfg = ExperimentConfig()
setup = clustered_setup(cfg)

# %%
rows = run_table1_fig7(table1_settings(cfg.L, cfg.S_x), cfg, setup=setup)
for r in rows:
    M = np.array([[r[f"m{i}{j}"] for j in range(cfg.k)] for i in range(cfg.k)])
    print(f"beta_x={r['beta_x']:.3f} beta_y={r['beta_y']:.3f}  diag={r['d_diag']:.2f} "
          f"off={r['d_off']:.2f} ratio={r['ratio']:.2f}")
print(np.round(M, 2))

# %% [markdown]
# ## Ratio against the disclosed fraction
#
# Database fully ambiguized, query decoys swept from none to all positions.

# %%
for r in run_table1_fig7(fig7_settings(cfg.L, cfg.S_x), cfg, setup=setup):
    print(f"disclosed {r['disclosed_fraction']:.3f}  ratio {r['ratio']:.3f}")
