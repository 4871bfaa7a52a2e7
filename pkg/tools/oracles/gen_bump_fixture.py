#!/usr/bin/env python3
"""Freeze reference values for the flat-interior bump profile.

The deformation module drives everything through the profile
``f(s) = exp(-1/s)`` for ``s > 0`` (identically zero for ``s <= 0``),
whose first two derivatives have the closed forms

    f'(s)  = exp(-1/s) / s^2
    f''(s) = exp(-1/s) * (1/s^4 - 2/s^3)

This script verifies those closed forms against sympy.diff and freezes
high-precision samples to ``tests/fixtures/bump_oracle.json``, together
with an independently derived reference value for the overlap-fraction
search: with comparison constant 0 and unit ball radius the positivity
bracket ``4(r^2-rho)(1-2rho) - c*rho^2`` stays positive on
``(0, mu(2-mu)]`` iff ``mu < 1 - sqrt(1/2)``; the largest 1/256-grid
value below that is 74/256 and the returned fraction after the 0.9
safety shrink is 0.9 * 74/256.
"""

import json
import pathlib

import mpmath as mp
import sympy as sp


def main():
    s = sp.symbols("s", positive=True)
    f = sp.exp(-1 / s)
    d1 = sp.simplify(sp.diff(f, s) - f / s**2)
    d2 = sp.simplify(sp.diff(f, s, 2) - f * (1 / s**4 - 2 / s**3))
    assert d1 == 0, d1
    assert d2 == 0, d2
    # two more orders, recorded for completeness of the closed-form family
    d3 = sp.simplify(sp.diff(f, s, 3) - f * (1 / s**6 - 6 / s**5 + 6 / s**4))
    d4 = sp.simplify(
        sp.diff(f, s, 4) - f * (1 / s**8 - 12 / s**7 + 36 / s**6 - 24 / s**5)
    )
    assert d3 == 0, d3
    assert d4 == 0, d4

    mp.mp.dps = 40
    samples = []
    for sv in ("0.02", "0.05", "0.1", "0.25", "0.5", "1", "2.5"):
        x = mp.mpf(sv)
        e = mp.e ** (-1 / x)
        samples.append(
            {
                "s": float(x),
                "f": float(e),
                "fp": float(e / x**2),
                "fpp": float(e * (1 / x**4 - 2 / x**3)),
            }
        )

    mu_max = 1 - mp.sqrt(mp.mpf(1) / 2)
    j = int(mp.floor(256 * mu_max))
    assert j == 74
    out = {
        "samples": samples,
        "overlap_example": {
            "comparison_constant": 0.0,
            "radius": 1.0,
            "mu_supremum": float(mu_max),
            "grid_numerator": j,
            "returned_mu": float(mp.mpf("0.9") * j / 256),
        },
    }
    dest = pathlib.Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "bump_oracle.json"
    dest.write_text(json.dumps(out, indent=1, sort_keys=True))
    print(f"wrote {dest}")
    print("closed-form derivative identities verified")


if __name__ == "__main__":
    main()
