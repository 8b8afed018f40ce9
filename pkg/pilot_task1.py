import time

import numpy as np

from lipscope import Network, TrainConfig, gen_sinusoid, random_network, run_training


def task1_net(widths, seed):
    sizes = [10, 10] + list(widths) + [1]
    net = random_network(sizes, head="identity", seed=seed)
    net.weights[0] = np.eye(10)
    return net


def epoch_mse(log):
    T = len(log)
    n = log.n_points
    return log.loss[: (T // n) * n].reshape(-1, n).mean(axis=1)


for widths in [(16, 16), (32, 32), (32, 32, 32)]:
    for omega in (0.25, 1.0):
        ds = gen_sinusoid(100, omega, seed=0)
        net = task1_net(widths, seed=1000)
        cfg = TrainConfig(epochs=2000, lr=0.001, loss="mse", seed=0,
                          freeze_first_weights=True,
                          checkpoint_stride_epochs=100)
        t0 = time.time()
        log = run_training(net, ds, cfg)
        dt = time.time() - t0
        em = epoch_mse(log)
        hit = np.nonzero(em < 0.05)[0]
        first = int(hit[0]) if hit.size else -1
        print("widths %-14r omega %.2f  final %.4f  min %.4f  first<0.05 %5d  %5.1fs"
              % (widths, omega, em[-1], em.min(), first, dt))
