"""
Checking hand-written gradients
===============================

Every layer of the encoder has a manual backward pass.  Here the whole
chain (convolutions, pooling, the fully connected layer, normalisation and
the prototype loss) is compared against central finite differences in
float64 on a tiny network.
"""

import numpy as np

from augcluster import numerics as nx
from augcluster.encoder import ArchConfig, encode, encode_backward, encoder_init
from augcluster.training import nll_loss_and_grad

arch = ArchConfig(input_size=(8, 8), filters=(4, 6), embedding_dim=8)
params = encoder_init(arch, seed=0).astype(np.float64)
rng = np.random.default_rng(0)
x = rng.random((4, 3, 8, 8))
protos = rng.normal(size=(4, 8))
protos /= np.linalg.norm(protos, axis=1, keepdims=True)
targets = np.arange(4)

# Analytic gradients: loss -> embeddings -> every parameter tensor.
z, cache = encode(params, x)
loss, dz, dp = nll_loss_and_grad(z, targets, protos, tau=0.9)
grads = encode_backward(params, cache, dz)
print(f"loss {loss:.4f}")

# Numerical gradients, one tensor at a time.
for name, tensor in params.tensors().items():
    def f(t, tensor=tensor):
        saved = tensor.copy()
        tensor[...] = t
        value = nll_loss_and_grad(encode(params, x)[0], targets, protos, 0.9)[0]
        tensor[...] = saved
        return value

    err = nx.finite_diff_check(f, tensor, grads[name], eps=1e-5)
    print(f"{name:>14} {str(tensor.shape):>14} max rel err {err:.1e}")

err = nx.finite_diff_check(lambda p: nll_loss_and_grad(z, targets, p, 0.9)[0], protos, dp)
print(f"{'prototypes':>14} {str(protos.shape):>14} max rel err {err:.1e}")
