import time

import numpy as np

from lipscope import TrainConfig, forward_many, gen_sinusoid, random_network, run_training


def task1_net(widths, seed):
    sizes = [10, 10] + list(widths) + [1]
    net = random_network(sizes, head="identity", seed=seed)
    net.weights[0] = np.eye(10)
    return net


def full_mse(net, ds):
    return float(np.mean((forward_many(net, ds.X)[0] - ds.y) ** 2))


ds = gen_sinusoid(100, 1.0, seed=0)
for widths in [(16, 16), (64,), (64, 64), (128,)]:
    net = task1_net(widths, seed=1000)
    t0 = time.time()
    line = []
    for chunk in range(6):
        cfg = TrainConfig(epochs=2000, lr=0.001, loss="mse", seed=100 + chunk,
                          freeze_first_weights=True, record_bias_trace=False,
                          checkpoint_stride_epochs=2000)
        run_training(net, ds, cfg)
        line.append("%.4f" % full_mse(net, ds))
    print("widths %-10r mse@2k..12k: %s  (%.0fs)" % (widths, " ".join(line), time.time() - t0))
