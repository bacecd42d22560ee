"""Twenty normal draws, five of them moved far to the left.

The ordinary posterior for the mean is dragged towards the outliers; the
Hellinger and negative-exponential posteriors stay near the bulk of the data.

    python demos/outliers_normal_mean.py
"""

import numpy as np

from disparitybayes import LikelihoodPosterior, NormalMean, NormalPrior, build_iid_dposterior
from disparitybayes.sampler import ChainConfig, run_metropolis, summarize

rng = np.random.default_rng(7)
x = rng.normal(5.0, 1.0, 20)
x[:5] = -5.0  # bulk centred at 5, outliers at 5 - 10

model = NormalMean(1.0)
prior = NormalPrior(0.0, 5.0)
posteriors = {
    "likelihood": LikelihoodPosterior(model, prior, x),
    "hellinger": build_iid_dposterior(x, model, prior, "hd", seed=1),
    "neg. exponential": build_iid_dposterior(x, model, prior, "ned", seed=1),
}

print(f"sample mean {x.mean():.3f}, median {np.median(x):.3f}")
print(f"{'posterior':<18}{'EDAP':>8}{'MDAP':>8}   95% interval")
for name, post in posteriors.items():
    chain = run_metropolis(post.log_target, [np.median(x)], ChainConfig(20_000, 0.5, seed=3))
    s = summarize(chain, post)
    print(f"{name:<18}{s.edap[0]:8.3f}{s.mdap[0]:8.3f}   ({s.lower[0]:.3f}, {s.upper[0]:.3f})")
