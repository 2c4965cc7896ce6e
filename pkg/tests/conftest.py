import torch

# The determinism contract (and the bitwise checkpoint test) only holds
# single-threaded; set it once before any test touches torch.
torch.set_num_threads(1)
