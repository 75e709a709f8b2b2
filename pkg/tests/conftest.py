import torch

# Small tensors dominate this suite; single-thread kernels beat the
# threading overhead and keep timings stable on busy machines.
torch.set_num_threads(1)
