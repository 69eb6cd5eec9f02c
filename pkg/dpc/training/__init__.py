# Optimizer, training loop, checkpoints, metrics and harnesses
