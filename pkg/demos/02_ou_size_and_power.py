# Size and power on the Ornstein-Uhlenbeck family dX = -theta X dt + eps dW.
# A small Monte Carlo run through the experiment harness; the acceptance
# suite repeats it with more replications.
from smallnoise_gof.harness import ExperimentConfig, run_power_experiment, run_size_experiment

# Null model: rejection rates should sit near alpha = 0.05
size = run_size_experiment(ExperimentConfig(model="ou", theta0=[1.0], epsilons=[0.05, 0.01],
                                            replications=300, grid_n=1000, test="BOTH", seed=1))
for row in size.summary:
    print(f"null     eps={row['epsilon']:<5g} {row['test']:<6} rate={row['rate']:.3f} +- {row['se']:.3f}")

# Drift shifted by a constant 0.5: no family member fits, so both tests reject
power = run_power_experiment(ExperimentConfig(model="ou", theta0=[1.0], alternative="shift:0.5",
                                              epsilons=[0.05, 0.01], replications=300, grid_n=1000,
                                              test="BOTH", kind="power", seed=2))
print("best in-family fit theta* =", power.diagnostics["theta_star"])
for row in power.summary:
    print(f"shifted  eps={row['epsilon']:<5g} {row['test']:<6} rate={row['rate']:.3f} "
          f"median statistic={row['median_statistic']:.2f}")

# The invisible family ignores theta on [0, 1/2]; an alternative that only
# differs there is missed by the first test
inv = run_power_experiment(ExperimentConfig(model="invisible", theta0=[1.0], alternative="invisible",
                                            epsilons=[0.01], replications=300, grid_n=1000,
                                            test="FIRST", kind="power", seed=3))
print("invisible alternative, first test: rate =", inv.rate(0.01, "FIRST"),
      " C5 norm^2 =", inv.diagnostics["c5_norm_sq"])
