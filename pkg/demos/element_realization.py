"""Realization targets for one element: reference-plane sweep, selected shift and toy-element fit.

Run with ``python demos/element_realization.py``.
"""

import numpy as np

from gsmsynth import chi_sweep, fit_toy_element, random_toy_element, realization_target


def main():
    element = random_toy_element(phi_deg=20.0, lambdas=(1.3, -0.4), seed=7)
    gsm = element.gsm()

    sweep = chi_sweep(gsm)
    print(f"chi_max = {sweep.chi_max_deg:.0f} deg, selected chi* = {sweep.chi_star_deg:.0f} deg, "
          f"grid argmin = {sweep.chi_argmin_deg:.0f} deg")
    print(f"poles at {', '.join(f'{p:.2f}' for p in sweep.poles_deg) or 'none'} deg; near pole: {sweep.near_pole}")
    for chi in range(0, 180, 30):
        lam = sweep.lambdas[chi]
        print(f"  chi {chi:3d} deg: lambda = {lam[0]:+8.3f} {lam[1]:+8.3f}")

    target = realization_target(gsm, 1.0, np.radians(sweep.chi_star_deg))
    fit = fit_toy_element(target)
    print(f"\nfit at chi*: phi = {fit.element.phi_deg:.3f} deg, lambda = {np.round(fit.element.lambdas, 4)}")
    print(f"snapped: phi = {fit.snapped.phi_deg:.0f} deg, lambda = {np.round(fit.snapped.lambdas, 1)}")
    print(f"GSM residual exact {fit.residual:.2e}, snapped {fit.residual_snapped:.3f} (bound {fit.snap_bound:.3f})")


if __name__ == "__main__":
    main()
