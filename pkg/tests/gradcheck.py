"""Central finite-difference check of the training gradient on a tiny network.

The gradient reversal layer means autograd does not return the derivative of
the summed loss for the feature extractor: the adversarial part arrives
multiplied by -psi. The oracle therefore differentiates the adversarial term
separately and combines it with that sign for the encoder parameters.
"""
import numpy as np
import torch

from codaadapt.data import BenchmarkConfig, ShiftConfig, generate_benchmark
from codaadapt.model import init_model
from codaadapt.training import TrainConfig, Trainer

from toys import TOY_SPEC


def toy_trainer(psi=1.0, seed=0):
    src, tgt = generate_benchmark(16, 16, signal_length=64, shift=ShiftConfig(0.6), seed=seed,
                                  config=BenchmarkConfig(coda_length=128))
    cfg = TrainConfig(epochs=1, batch_size=16, method="full", seed=seed, psi=psi)
    state = init_model(TOY_SPEC, seed, dtype=torch.float64)
    tr = Trainer(src, tgt, cfg, state=state)
    return tr, src.features.astype(np.float64), src.labels, tgt.features.astype(np.float64)


def finite_difference_check(psi=1.0, h=1e-6, seed=0):
    """Return (autograd gradient, oracle gradient, parameter count)."""
    tr, xs, ys, xt = toy_trainer(psi, seed)
    m = tr.model
    m.train()
    rng_state = tr.aug_rng.bit_generator.state
    params = [p for g in tr.optimizer.groups for p in g["params"]]
    encoder_ids = {id(p) for p in m.encoder.parameters()}

    def components():
        tr.aug_rng.bit_generator.state = rng_state
        b = tr._losses(xs, ys, xt)
        return b.task + b.mcc + b.byol, b.adversarial

    for p in params:
        p.grad = None
    rest, adv = components()
    (rest + adv).backward()
    auto = torch.cat([p.grad.reshape(-1) for p in params])

    oracle = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                r_plus, a_plus = components()
                flat[i] = orig - h
                r_minus, a_minus = components()
                flat[i] = orig
                d_rest = (r_plus - r_minus).item() / (2 * h)
                d_adv = (a_plus - a_minus).item() / (2 * h)
                sign = -psi if id(p) in encoder_ids else 1.0
                oracle.append(d_rest + sign * d_adv)
    return auto, torch.tensor(oracle, dtype=torch.float64), sum(p.numel() for p in params)
