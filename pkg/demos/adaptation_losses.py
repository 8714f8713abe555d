"""
The domain adaptation losses
============================

Three terms help a classifier trained on labeled source data work on an
unlabeled target domain: an adversarial domain loss through a gradient
reversal layer, a class confusion penalty on target predictions, and a
BYOL alignment between two augmented views of each target sample.
"""
import numpy as np
import torch

from codaadapt.losses import byol_loss, mcc_loss
from codaadapt.model import NetworkSpec, byol_forward, count_parameters, ema_update, grad_reverse, init_model

# gradient reversal: identity forward, -psi times the gradient backward
x = torch.tensor([1.0, -2.0], requires_grad=True)
(grad_reverse(x, psi=0.5) * torch.tensor([3.0, 1.0])).sum().backward()
print("reversed gradient:", x.grad.tolist())

# class confusion: 2/3 for uniform predictions, 0 when classes never mix
print("uniform batch:", round(mcc_loss(torch.zeros(16, 3))[0].item(), 4))
confident = torch.tensor([[9.0, 0, 0], [0, 9.0, 0], [0, 0, 9.0]]).repeat(5, 1)
print("confident, separated batch:", round(mcc_loss(confident, temperature=1.0)[0].item(), 4))

# BYOL: squared distance of unit vectors, 0 / 2 / 4
a = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
print("identical, orthogonal, opposite:", [round(byol_loss(a, b).item(), 3) for b in (a, a.flip(1), -a)])

# the network and its moving-average target branch
model = init_model(NetworkSpec(), seed=0)
for name in ("encoder", "classifier", "discriminator", "projector", "predictor"):
    print(f"{name:>13s}: {count_parameters(getattr(model, name)):7d} parameters")
views = np.random.default_rng(0).normal(size=(4, 1024)).astype(np.float32)
pred, proj = byol_forward(model, views, views)
print("prediction and projection widths:", pred.shape[1], proj.shape[1])
ema_update(model, tau=0.99)
