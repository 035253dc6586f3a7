"""Numerics behind the estimators: integrator order, differencing, DCT.

Three short experiments on the harmonic oscillator (whose solution is
known in closed form):

1. halving the RK4 internal step should cut the trajectory error by about
   2^4 = 16;
2. second-order finite differences recover derivatives with error ~ h^2 in
   the grid spacing;
3. a low-pass DCT truncation compresses a smooth trajectory with a
   round-trip error that grows gracefully as coefficients are dropped.
"""

import numpy as np

from dynident import (
    TimeGrid,
    dct_truncate,
    estimate_derivatives,
    get_system,
    idct_expand,
    integrate,
)


def main():
    system = get_system("ode24")  # x'' = -omega^2 x with omega = 1
    theta = np.array([1.0])
    grid = TimeGrid.uniform(0.0, 10.0, 101)
    exact = np.stack([np.cos(grid.points), -np.sin(grid.points)], axis=1)

    print("RK4 order check (max error vs internal step):")
    errors = {}
    for h in (0.1, 0.05, 0.025):
        traj = integrate(system, theta, grid=grid, h_int=h)
        errors[h] = np.max(np.abs(traj.states - exact))
        print(f"  h = {h:<6} max error = {errors[h]:.3e}")
    print(f"  ratios between successive halvings: "
          f"{errors[0.1] / errors[0.05]:.1f}, {errors[0.05] / errors[0.025]:.1f} "
          f"(a fourth-order method gives ~16)\n")

    print("finite-difference derivative error (second order in spacing):")
    for n in (51, 101, 201):
        g = TimeGrid.uniform(0.0, 10.0, n)
        traj = integrate(system, theta, grid=g)
        est = estimate_derivatives(traj)
        true_deriv = np.stack([-np.sin(g.points), -np.cos(g.points)], axis=1)
        print(f"  spacing {g.spacing:.2f}: max |error| = "
              f"{np.max(np.abs(est - true_deriv)):.2e}")
    print()

    print("DCT compression of the trajectory (fraction kept vs round-trip error):")
    traj = integrate(system, theta, grid=grid)
    for keep in (0.5, 0.25, 0.1):
        coeffs = dct_truncate(traj.states, keep)
        back = idct_expand(coeffs, grid.n_points)
        err = np.max(np.abs(back - traj.states))
        print(f"  keep {keep:>4.0%} ({coeffs.shape[0]:>3d} coefficients): "
              f"max round-trip error = {err:.2e}")


if __name__ == "__main__":
    main()
