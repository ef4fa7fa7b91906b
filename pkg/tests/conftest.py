import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def randomize_parameters(module: torch.nn.Module, seed: int = 0, scale: float = 0.1):
    """Overwrite every parameter with small seeded noise so zero-initialized
    projections become active; temperatures stay near 1 to keep attention
    logits sane."""
    gen = torch.Generator(device="cpu").manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            noise = torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale
            if "temperature" in name:
                p.copy_(1.0 + noise)
            else:
                p.copy_(noise)
    return module


def finite_diff_check(
    fn,
    tensors,
    n_coords: int = 4,
    h: float = 1e-4,
    rtol: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-6,
):
    """Compare autograd gradients of the scalar fn() against central finite
    differences on sampled coordinates of each tensor (double precision)."""
    for t in tensors:
        assert t.dtype == torch.float64, "finite-difference checks run in double precision"
    loss = fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=False)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for tensor, grad in zip(tensors, grads):
        flat = tensor.detach().reshape(-1)
        gflat = grad.reshape(-1)
        idxs = rng.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False)
        for i in idxs:
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
            lp = float(fn().detach())
            with torch.no_grad():
                flat[i] = orig - h
            lm = float(fn().detach())
            with torch.no_grad():
                flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            an = float(gflat[i])
            if abs(fd) < floor and abs(an) < floor:
                continue
            rel = abs(fd - an) / max(abs(fd), abs(an))
            worst = max(worst, rel)
            assert rel <= rtol, f"gradient mismatch: analytic {an}, numeric {fd}, rel {rel}"
    return worst


def weighted_sum_loss(out: torch.Tensor, seed: int = 1) -> torch.Tensor:
    """Scalar projection of a tensor output with fixed random weights, so
    every output coordinate contributes to the gradient."""
    gen = torch.Generator(device="cpu").manual_seed(seed)
    w = torch.randn(out.shape, generator=gen, dtype=out.dtype)
    return (out * w).sum()
