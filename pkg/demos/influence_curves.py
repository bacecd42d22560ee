"""How far one unit of contamination at ``z`` moves the posterior mean.

Under the KL disparity (ordinary Bayes) the displacement grows linearly in
``z``; under Hellinger and the negative exponential it rises and then falls
back towards zero once the contamination is far from the model.

    python demos/influence_curves.py
"""

from disparitybayes import NormalDensity, NormalMean, NormalPrior, influence_alpha

g = NormalDensity(5.0, 1.0)
model, prior = NormalMean(1.0), NormalPrior(0.0, 5.0)
grid = [5.0, 7.0, 9.0, 12.0, 16.0, 20.0]

print("z      " + "".join(f"{k:>10}" for k in ("kl", "hd", "ned")))
for z in grid:
    cells = []
    for kind in ("kl", "hd", "ned"):
        r = influence_alpha(g, model, prior, 20, z, 0.05, kind=kind, steps=4000, seed=1)
        cells.append(r.displacement[0])
    print(f"{z:<7g}" + "".join(f"{c:10.3f}" for c in cells))
