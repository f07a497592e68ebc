# coding: utf-8
# # Quickstart: enroll a database and identify a noisy probe
#
# We learn a sparsifying transform on a synthetic clustered database, publish
# ambiguized ternary codes, and identify a noisy probe two ways: privately,
# with the full query code, and publicly, by asking the server for the posting
# lists of a handful of positions.

# %%
import numpy as np

from stcpriv import (KeyMatrix, ambiguize_batch, aggregate_scores, build_query, encode_batch,
                     enroll, gen_clustered, learn_transform, private_decode, server_lookup, ternary_encode)

N = L = 256
S_x, S_ns = 32, 64
X, labels = gen_clustered(k=4, per_cluster=100, N=N, seed=0)
T = learn_transform(X, S_x, KeyMatrix.random(N, seed=1), max_iters=20)
print("objective trace:", np.round(T.objective_trace[:5], 1), "...")

# %% [markdown]
# Each column becomes a ternary code with exactly S_x non-zeros. The owner then
# fills S_ns of the remaining zeros with random signs before publishing.

# %%
A = encode_batch(T, X, S_x)
P = ambiguize_batch(A, S_ns, seed=2)
db = enroll(P)
print("non-zeros per code:", int((A != 0).sum(0)[0]), "->", int((P != 0).sum(0)[0]))
print("list density:", round(db.density, 4))

# %% [markdown]
# ## Private decoding
#
# A clean match sits at squared distance about S_ns (the decoy signs), so the
# radius has to cover it.

# %%
rng = np.random.default_rng(3)
m = 123
y = X[:, m] + np.sqrt(0.15) * rng.standard_normal(N)
b = ternary_encode(T, y, S_x)
gamma = (2 * S_x + S_ns) / L
res = private_decode(b, db, gamma)
print(res.decision, "top:", res.entries[:3], "true id:", m)

# %% [markdown]
# ## Public decoding
#
# The client sends the query support mixed with decoy positions. Decoy lists
# are thrown away locally and the remaining votes are summed.

# %%
req = build_query(y, T, S_y=S_x, S_nq=32, rng_seed=4)
lists = server_lookup(req.positions, db)
cand = aggregate_scores(lists, req)
print(cand.decision, "top:", cand.entries[:3], "requested", req.positions.size, "positions")
