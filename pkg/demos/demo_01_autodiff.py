"""
Reverse-mode gradients on a tape
================================

Operations on tensors are recorded only inside a ``Tape`` block; one reverse
sweep then fills in the gradient of a scalar loss with respect to every
trainable leaf. Here the tape is checked against central differences, first
on a toy expression and then on a narrow copy of the full classifier.
"""
import numpy as np

from bigru_eeg import autodiff as ad
from bigru_eeg.gradcheck import numeric_grad, relative_error
from bigru_eeg.nn import ArchConfig, build_model, model_forward

rng = np.random.default_rng(0)

# a small expression: mean(tanh(x @ W) * x @ W)
x = ad.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
W = ad.Tensor(rng.standard_normal((3, 2)), requires_grad=True)

with ad.Tape() as tape:
    h = x @ W
    loss = ad.mean(ad.tanh(h) * h)
grads = tape.backward(loss, [x, W])

numeric = numeric_grad(lambda: ad.mean(ad.tanh(x @ W) * (x @ W)).item(), [x.data, W.data])
for name, t, n in zip(("x", "W"), (x, W), numeric):
    print(f"d loss / d {name}: relative error {relative_error(grads[t], n):.1e}")

# the same check on the stacked Bi-GRU model, shrunk to run in seconds
arch = ArchConfig(n_features=3, hidden=(4, 3, 2), dense=(8, 4), dtype="float64")
model = build_model(arch, init_seed=1)
for p in model.named().values():
    p.data += 0.1 * rng.standard_normal(p.shape)  # keep ReLUs off their kink
batch = rng.standard_normal((2, 5, 3))
targets = np.eye(2)


def model_loss():
    logits = model_forward(batch, model, training=True, rng=np.random.default_rng(7), return_logits=True)
    return ad.softmax_cross_entropy(logits, targets)


named = model.named()
with ad.Tape() as tape:
    out = model_loss()
grads = tape.backward(out, named)
numeric = numeric_grad(lambda: model_loss().item(), [t.data for t in named.values()])
worst = max(relative_error(grads[k], n) for k, n in zip(named, numeric))
print(f"{len(named)} parameter tensors, worst relative error {worst:.1e}")
