# Example 1 walkthrough: dX = theta dt + eps dW on [0, 1].
# Here both statistics have closed forms, which makes it a good first look.
import numpy as np

from smallnoise_gof import Grid, NoiseStream, builtin_example1, first_test, second_test, simulate
from smallnoise_gof.quadrature import trapz

model = builtin_example1()
grid = Grid(2000, model.T)
traj = simulate(model, [0.5], 0.1, grid, NoiseStream(seed=1, stream_id=0))

# The MLE is the end point X_1, so the first test integrates a squared Brownian bridge
rep1, cur1 = first_test(model, traj)
bridge = (traj.values - traj.values[-1] * traj.t) / traj.epsilon
print("theta_hat =", rep1.theta_hat, " X_1 =", traj.values[-1])
print("delta =", rep1.statistic, " direct bridge integral =", trapz(bridge ** 2, grid.dt))
print("threshold d_0.05 =", rep1.threshold, " reject:", rep1.reject)

# The second test maps the bridge back to a Wiener process
rep2, cur2 = second_test(model, traj)
print("Delta =", rep2.statistic, " threshold c_0.05 =", rep2.threshold, " reject:", rep2.reject)

# Var W(t) ~ t over independent paths; compare with the bridge variance t(1 - t)
coarse = Grid(400, model.T)
W_late, B_late = [], []
for i in range(400):
    tr = simulate(model, [0.5], 0.1, coarse, NoiseStream(seed=2, stream_id=i))
    _, cur = second_test(model, tr, c_alpha=1.0)
    W_late.append(cur.W_values[300])
    B_late.append(cur.U_values[300])
print("t = 0.75: Var W =", np.var(W_late), "(expect 0.75 +- 0.05), Var U =", np.var(B_late), "(expect 0.19 +- 0.01)")
