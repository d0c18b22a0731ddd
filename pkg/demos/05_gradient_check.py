"""Backprop of the numpy network against central finite differences."""
import numpy as np

from hydra_ensemble.micronet import backward, build_network, conv2d, dense, dense_block, flatten, relu, residual_block

net = build_network(
    (6, 6, 2),
    [conv2d(3), relu(), residual_block(), dense_block(2, 2), conv2d(3, kernel=1, stride=2), relu(), flatten(),
     dense(5), relu(), dense(3)],
    metadata_width=2,
    seed=4,
)
rng = np.random.default_rng(0)
x = rng.normal(size=(2, 6, 6, 2))
md = rng.normal(size=(2, 2))
y = np.array([0, 2])
w = np.array([1.0, 0.5, 2.0])

loss, grads = backward(net, x, md, y, w, train_mode=False)
print(f"loss {loss:.6f}, {net.num_parameters()} parameters")

h = 1e-5
worst = 0.0
for p, g in zip(net.params, grads):
    for name, arr in p.items():
        flat = arr.reshape(-1)
        for k in range(0, flat.size, max(1, flat.size // 5)):
            keep = flat[k]
            flat[k] = keep + h
            up, _ = backward(net, x, md, y, w, train_mode=False)
            flat[k] = keep - h
            down, _ = backward(net, x, md, y, w, train_mode=False)
            flat[k] = keep
            num = (up - down) / (2 * h)
            ana = g[name].reshape(-1)[k]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
print(f"worst relative error over sampled weights: {worst:.2e}")
