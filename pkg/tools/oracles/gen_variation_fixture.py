#!/usr/bin/env python3
"""Freeze the first variation of the curvature tensor along a matrix path.

Independent oracle: for a conformally flat metric ``g`` on ``C^2`` and a
polynomial Hermitian direction ``h``, differentiate the *full* curvature
tensor of ``g + t h`` symbolically in ``t`` at ``t = 0`` and store every
component.  The package's closed-form variation formula must reproduce
these values; the companion finite-difference certification then checks
the same object numerically at second order.

Also stores the trace of the derivative against a second conformally
flat background, exercising the mixed-trace path.
"""

import json
import pathlib

import sympy as sp


def wirt(expr, xs, ys, i, anti):
    sgn = 1 if anti else -1
    return (sp.diff(expr, xs[i]) + sgn * sp.I * sp.diff(expr, ys[i])) / 2


def exact(p):
    return sp.Rational(*float(p).as_integer_ratio())


def curvature_lowered(H, xs, ys, n):
    Hinv = H.T.inv()
    Gamma = [[[sum(Hinv[k, l] * wirt(H[j, l], xs, ys, i, False) for l in range(n))
               for k in range(n)] for j in range(n)] for i in range(n)]
    Rm = [[[[-wirt(Gamma[i][k][l], xs, ys, j, True) for l in range(n)]
            for k in range(n)] for j in range(n)] for i in range(n)]
    R4 = [[[[sum(Rm[i][j][k][r] * H[r, l] for r in range(n)) for l in range(n)]
            for k in range(n)] for j in range(n)] for i in range(n)]
    return R4


def main():
    n = 2
    xs = sp.symbols("x1 x2", real=True)
    ys = sp.symbols("y1 y2", real=True)
    t = sp.symbols("t", real=True)
    z = [xs[i] + sp.I * ys[i] for i in range(n)]

    phi = sp.Rational(1, 4) * xs[0] - sp.Rational(3, 20) * ys[1]
    g = sp.exp(phi) * sp.eye(n)

    # polynomial Hermitian direction (entrywise conjugate-symmetric)
    h01 = sp.Rational(1, 10) * z[0] + sp.Rational(1, 20) * sp.conjugate(z[1]) * z[0]
    h = sp.Matrix(
        [
            [sp.Rational(1, 5) + sp.Rational(1, 10) * xs[0] ** 2, h01],
            [sp.conjugate(h01), sp.Rational(3, 10) + sp.Rational(1, 5) * ys[0] ** 2],
        ]
    )

    R4t = curvature_lowered(g + t * h, xs, ys, n)
    dR = [[[[sp.diff(R4t[i][j][k][l], t).subs(t, 0) for l in range(n)]
            for k in range(n)] for j in range(n)] for i in range(n)]

    psi = -sp.Rational(1, 5) * xs[1] + sp.Rational(1, 10) * ys[0]
    tilde = sp.exp(psi) * sp.eye(n)
    tinv = tilde.T.inv()
    traced = [[sum(tinv[k, l] * dR[k][l][i][j] for k in range(n) for l in range(n))
               for j in range(n)] for i in range(n)]

    point = (0.21, -0.33, 0.12, 0.44)
    subs = dict(zip(list(xs) + list(ys), map(exact, point)))

    def cnum(e):
        v = complex(sp.N(e.subs(subs), 30))
        return [v.real, v.imag]

    out = {
        "n": n,
        "point": list(point),
        "phi": "0.25*x1 - 0.15*y2",
        "psi": "-0.2*x2 + 0.1*y1",
        "h_description": [
            ["0.2 + 0.1*x1^2", "0.1*z1 + 0.05*conj(z2)*z1"],
            ["conj(upper)", "0.3 + 0.2*y1^2"],
        ],
        "dcurvature": [[[[cnum(dR[i][j][k][l]) for l in range(n)]
                         for k in range(n)] for j in range(n)] for i in range(n)],
        "traced_dcurvature": [[cnum(traced[i][j]) for j in range(n)]
                              for i in range(n)],
    }

    # sanity: Hermitian pairing of the derivative tensor
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    a = complex(sp.N(dR[i][j][k][l].subs(subs), 30))
                    b = complex(sp.N(sp.conjugate(dR[j][i][l][k]).subs(subs), 30))
                    assert abs(a - b) < 1e-24

    dest = pathlib.Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "variation_oracle.json"
    dest.write_text(json.dumps(out, indent=1, sort_keys=True))
    print(f"wrote {dest}")
    print("pairing self-check passed")


if __name__ == "__main__":
    main()
