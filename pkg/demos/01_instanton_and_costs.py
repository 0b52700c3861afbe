"""The interface profile and what it costs to move it.

Solves for the instanton at beta = 2, measures its free energy and mobility,
then compares the action of a slowly translated instanton with V^2 T / mu and
tabulates the nucleation costs w_n.
"""
from kacldp import Grid, default_kernel, free_energy, instanton_solve, mean_field_fixed_point, mobility
from kacldp.cost import action, crossover_v2t, nucleation_cost, optimal_nucleation, translating_instanton_path

beta = 2.0
J = default_kernel()

inst = instanton_solve(beta, Grid.symmetric(14.0, 0.005), J)
mb = mean_field_fixed_point(beta)
F = free_energy(inst, inst.grid, J, beta).total
mu = mobility(inst)
print(f"pure phases +-{mb:.6f}; F(mbar) = {F:.6f}; mu = {mu:.6f}")

# drag the front a distance R over macroscopic time T at small eps
eps, R, T = 0.05, 0.5, 1.0
grid = Grid.symmetric(R / eps / 2 + 8, 0.025)
path = translating_instanton_path(inst, grid, eps, R / T, T, nt=21, x0=-R / eps / 2)
got = action(path, J, beta).total
print(f"translation action {got:.6f} against V^2 T / mu = {(R / T) ** 2 * T / mu:.6f}")

# when does it pay to nucleate a pair of fronts instead?
print(f"first crossover at V^2 T = {crossover_v2t(0, F, mu):.6f}")
for v2t in (0.2, 0.5, 2.0, 5.0):
    n = optimal_nucleation(v2t, v2t, F, mu)
    costs = ", ".join(f"{nucleation_cost(k, v2t, v2t, F, mu):.4f}" for k in range(4))
    print(f"V^2 T = {v2t:4.1f}: w_0..w_3 = {costs}; optimal n = {n}")
