"""
Inside a texture-aware refinement module
========================================

The module turns decoder features into per-pixel texture descriptors (the
upper triangle of a channel outer product in a few 1x1 projections), fuses
them into modulation maps gamma and beta, and uses those to restyle the
instance-normalized features. Its final conv starts at zero, so an untrained
module passes features through untouched.

Run with ``python demos/texture_refinement.py``.
"""

import numpy as np

from texcamo.network import NetworkConfig, TANet, variant_config
from texcamo.tarm import Tarm, TarmConfig, init_tarm_params, pixel_covariance, project_branches, tarm_forward
from texcamo.tensor import Tensor

rng = np.random.default_rng(0)

# %%
# Per-pixel descriptors are rank one: each pixel's matrix is v v^T for that
# pixel's projected feature vector v.
f = Tensor(rng.normal(size=(1, 8, 6, 6)))
cfg = TarmConfig(c_in=8, k_branches=2, c1=4)
w = init_tarm_params(cfg, seed=0, zero_out=False)
branch = project_branches(f, [(w["branch0.w"], w["branch0.b"])])[0]
desc = pixel_covariance(branch)
print("descriptor channels per branch:", desc.shape[1], "= c1 (c1 + 1) / 2 with c1 =", cfg.c1)

# %%
# At initialization the output conv is zero, so the module is an identity map.
module = Tarm(cfg, seed=0)
out, maps = module(f)
print("identity at init:", out.data.tobytes() == f.data.tobytes())
print("gamma range:", maps.gamma.data.min().round(3), "to", maps.gamma.data.max().round(3))

# %%
# With the fused texture normalized, gamma and beta ignore the feature scale.
# Without it they grow with its square, which makes training unstable.
for normalize in (True, False):
    c = TarmConfig(c_in=8, k_branches=2, c1=4, normalize_texture=normalize)
    wc = init_tarm_params(c, seed=0, zero_out=False)
    spread = [np.abs(tarm_forward(Tensor(s * f.data), c, wc)[1].gamma.data).max() for s in (1.0, 10.0)]
    print(f"normalize_texture={normalize}: max |gamma| at scale 1 -> {spread[0]:.2f}, at scale 10 -> {spread[1]:.2f}")

# %%
# The same property at network level: the full model and the model without
# any refinement modules produce bit-identical logits before training.
full = TANet(variant_config("full", NetworkConfig())[0])
plain = TANet(variant_config("M2", NetworkConfig())[0], {k: v for k, v in full.params.items() if "tarm" not in k})
x = rng.random((1, 3, 64, 64))
print("network identity:", all(a.data.tobytes() == b.data.tobytes() for a, b in zip(full(x)[0], plain(x)[0])))
