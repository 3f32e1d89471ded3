"""
Synthetic images and a biased client split
==========================================
"""

import numpy as np

from dpotsim.data import PartitionSpec, generate_synthetic, load_idx, partition_noniid, save_idx

data = generate_synthetic(n_classes=10, per_class=100, image_shape=(16, 16), noise_sigma=1.7, seed=0)
print(len(data), "images of shape", data.image_shape)

# one lit-pixel template per class, buried in heavy noise
for row in (data.images[data.labels == 3][0] > 0.5).astype(int)[:4]:
    print("".join(".#"[v] for v in row))

# half of every class goes to "its" group of clients, the rest is spread out
clients = partition_noniid(data, PartitionSpec(n_clients=20, bias=0.5, seed=0))
for k in (0, 1, 10):
    counts = np.bincount(clients[k].labels, minlength=10)
    print(f"client {k:2d}: {len(clients[k]):3d} examples, class counts {counts}")

# IDX round trip (pixels quantised to 8 bits)
save_idx(data, "/tmp/demo-images", "/tmp/demo-labels")
back = load_idx("/tmp/demo-images", "/tmp/demo-labels")
print("max quantisation error:", np.abs(back.images - data.images).max())
