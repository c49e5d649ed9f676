"""
Shrinkage in the plain normal means problem
===========================================

Every observation has unit noise and the true means come from N(10, 1).
The Bayes rule is known here, so we can see how close a prior learned by
minimizing SURE gets to it, next to the grid NPMLE.
"""

# %%
from sure_eb import DgpSpec, FitConfig, fit, generate, insample_mse, sure_loss

draw = generate(DgpSpec("homosc_normal", n=1000, seed=1, a_star=1.0))
data, mu = draw.observations, draw.mu
print(f"{len(data)} observations, z ranges over [{data.z.min():.2f}, {data.z.max():.2f}]")

# %%
# Fit the particle prior (100 atoms) by Adam on SURE, and the NPMLE by EM.
pm = fit("sure-pm", data)
npmle = fit("npmle", data)
print(f"SURE-PM ran {pm.iterations_run} Adam steps, final SURE {pm.final_loss:.4f}")
print(f"NPMLE ran {npmle.iterations_run} EM steps")

for name, est in [("MLE (z itself)", data.z), ("NPMLE", npmle.estimates),
                  ("SURE-PM", pm.estimates), ("Bayes", draw.oracle_estimates)]:
    print(f"  {name:15s} in-sample MSE {insample_mse(mu, est):.4f}")

# %%
# SURE is observable, yet it tracks the MSE it never sees. The fitted
# prior's SURE on this sample is close to its realized squared error.
print(f"SURE of the fitted prior {sure_loss(pm.prior, data):.4f} vs realized MSE {insample_mse(mu, pm.estimates):.4f}")

# %%
# The learned prior is discrete. Most of its mass sits within a couple of
# units of 10, the centre of the true prior.
prior = pm.prior
heavy = prior.weights > 0.01
print("atoms carrying more than 1% mass:")
for a, w in zip(prior.atoms[heavy], prior.weights[heavy]):
    print(f"  {a:7.3f}  {w:.3f}")
print(f"prior mean {prior.weights @ prior.atoms:.3f}, prior variance "
      f"{prior.weights @ (prior.atoms - prior.weights @ prior.atoms) ** 2:.3f}")

# %%
# A smaller particle budget changes little in this easy problem.
for K in (10, 30):
    res = fit("sure-pm", data, FitConfig(K=K))
    print(f"K={K:3d}: MSE {insample_mse(mu, res.estimates):.4f}")
