"""Flat parameter-vector algebra over torch model state.

The vector view covers every floating-point entry of the state dict in
state-dict order (weights, biases, and any float buffers; integer step
counters are excluded).  All vector math runs in float64 so aggregation
and replacement algebra are exact to working precision.
"""

import numpy as np
import torch


def state_spec(module: torch.nn.Module):
    """Ordered (name, shape, numel) for each float entry of the state dict."""
    spec = []
    for name, tensor in module.state_dict().items():
        if tensor.is_floating_point():
            spec.append((name, tuple(tensor.shape), tensor.numel()))
    return spec


def flatten_state(module: torch.nn.Module) -> np.ndarray:
    """Concatenate all float state entries into one float64 vector."""
    parts = []
    for _, tensor in module.state_dict().items():
        if tensor.is_floating_point():
            parts.append(tensor.detach().cpu().numpy().astype(np.float64).ravel())
    if not parts:
        raise ValueError("module has no floating-point state")
    return np.concatenate(parts)


def assign_state(module: torch.nn.Module, vector: np.ndarray):
    """Write a flat vector back into the module's float state entries."""
    vector = np.asarray(vector, dtype=np.float64)
    expected = sum(n for _, _, n in state_spec(module))
    if vector.ndim != 1 or vector.size != expected:
        raise ValueError(f"vector has {vector.size} entries, model expects {expected}")
    state = module.state_dict()
    offset = 0
    for name, tensor in state.items():
        if not tensor.is_floating_point():
            continue
        n = tensor.numel()
        chunk = vector[offset : offset + n].reshape(tuple(tensor.shape))
        state[name] = torch.from_numpy(chunk).to(tensor.dtype)
        offset += n
    module.load_state_dict(state, strict=True)
    return module
