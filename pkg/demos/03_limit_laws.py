# The two limit laws: integrated squared Brownian bridge (first test) and
# integrated squared Wiener process (second test).
import numpy as np

from smallnoise_gof import limits

for fam in limits.Family:
    kl = limits.sample_limit(fam, 200_000, truncation=1000, seed=0)
    path = limits.path_sample_limit(fam, 200_000, grid_n=500, seed=0)
    print(fam.value, " mean KL =", kl.mean(), " path =", path.mean(), " exact =", fam.mean)
    for a in (0.10, 0.05, 0.01):
        print(f"  alpha={a:<5} table={limits.quantile(fam, a):.4f}  "
              f"path sample={np.quantile(path, 1 - a):.4f}")
    # levels below the table use a shifted chi-square(1) tail
    print("  alpha=1e-4 extrapolated:", limits.quantile(fam, 1e-4))
    print("  KS distance KL vs path:", limits.ks_distance(kl, path))
