#!/usr/bin/env python3
"""Generate frozen curvature fixtures with an independent symbolic oracle.

This script never imports the package under test.  It evaluates the full
canonical-connection apparatus of several Hermitian metrics with sympy's
exact differentiation and writes high-precision reference values to
``tests/fixtures/curvature_oracle.json``.

Conventions (shared with the package, stated here once):

* ``H[j][l]`` is the metric pairing of the j-th holomorphic with the l-th
  anti-holomorphic coordinate direction (``H`` Hermitian positive).
* Raised array ``Hinv = (H^T)^{-1}`` so ``sum_l Hinv[k,l] H[j,l] = delta``.
* Connection ``Gamma[i][j][k] = sum_l Hinv[k,l] * d_i H[j,l]`` (d_i is the
  holomorphic Wirtinger derivative).
* Torsion ``T[i][j][k] = Gamma[i][j][k] - Gamma[j][i][k]``.
* Curvature (mixed) ``Rm[i][j][k][l] = - dbar_j Gamma[i][k][l]``; lowered
  ``R4[i][j][k][l] = sum_r Rm[i][j][k][r] * H[r][l]`` (slots 2 and 4 are
  the anti-holomorphic ones).
* First trace ``Ric1[i][j] = sum Hinv[k,l] R4[i][j][k][l]`` (equals
  ``- d_i dbar_j log det H``); second trace
  ``Ric2[i][j] = sum Hinv[k,l] R4[k][l][i][j]``; scalar
  ``sum Hinv[i,j] Ric1[i][j]``.
* Norms: ``|Rm|^2 = sum R4[ijkl] conj(R4[pqrs]) Hinv[i,p] Hinv[q,j]
  Hinv[k,r] Hinv[s,l]`` and ``|T|^2 = sum T[ij^k] conj(T[pq^r])
  Hinv[i,p] Hinv[j,q] H[k,r]``.
"""

import json
import pathlib

import sympy as sp

PREC = 30


def wirt(expr, xs, ys, i, anti):
    s = 1 if anti else -1
    return sp.together((sp.diff(expr, xs[i]) + s * sp.I * sp.diff(expr, ys[i])) / 2)


def apparatus(H, xs, ys, n):
    Hinv = H.T.inv()
    dH = [[[wirt(H[j, l], xs, ys, i, False) for l in range(n)] for j in range(n)]
          for i in range(n)]
    Gamma = [[[sp.together(sum(Hinv[k, l] * dH[i][j][l] for l in range(n)))
               for k in range(n)] for j in range(n)] for i in range(n)]
    T = [[[sp.together(Gamma[i][j][k] - Gamma[j][i][k]) for k in range(n)]
          for j in range(n)] for i in range(n)]
    Rm = [[[[sp.together(-wirt(Gamma[i][k][l], xs, ys, j, True))
             for l in range(n)] for k in range(n)] for j in range(n)]
          for i in range(n)]
    R4 = [[[[sp.together(sum(Rm[i][j][k][r] * H[r, l] for r in range(n)))
             for l in range(n)] for k in range(n)] for j in range(n)]
          for i in range(n)]
    Ric1 = [[sum(Hinv[k, l] * R4[i][j][k][l] for k in range(n) for l in range(n))
             for j in range(n)] for i in range(n)]
    Ric1_logdet = [[-wirt(wirt(sp.log(H.det()), xs, ys, i, False), xs, ys, j, True)
                    for j in range(n)] for i in range(n)]
    Ric2 = [[sum(Hinv[k, l] * R4[k][l][i][j] for k in range(n) for l in range(n))
             for j in range(n)] for i in range(n)]
    scal = sum(Hinv[i, j] * Ric1[i][j] for i in range(n) for j in range(n))
    return dict(H=H, Hinv=Hinv, dH=dH, Gamma=Gamma, T=T, R4=R4,
                Ric1=Ric1, Ric1_logdet=Ric1_logdet, Ric2=Ric2, scal=scal)


def norms(app, n):
    H, Hinv, R4, T = app["H"], app["Hinv"], app["R4"], app["T"]
    rm2 = sum(
        R4[i][j][k][l] * sp.conjugate(R4[p][q][r][s])
        * Hinv[i, p] * Hinv[q, j] * Hinv[k, r] * Hinv[s, l]
        for i in range(n) for j in range(n) for k in range(n) for l in range(n)
        for p in range(n) for q in range(n) for r in range(n) for s in range(n)
    )
    t2 = sum(
        T[i][j][k] * sp.conjugate(T[p][q][r])
        * Hinv[i, p] * Hinv[j, q] * H[k, r]
        for i in range(n) for j in range(n) for k in range(n)
        for p in range(n) for q in range(n) for r in range(n)
    )
    return rm2, t2


def exact(p):
    """The float64 value of ``p`` as an exact rational (bit-faithful)."""
    return sp.Rational(*float(p).as_integer_ratio())


def cnum(expr, subs):
    v = complex(sp.N(expr.subs(subs), PREC))
    return [v.real, v.imag]


def tensor_num(t, subs, depth):
    if depth == 0:
        return cnum(t, subs)
    return [tensor_num(x, subs, depth - 1) for x in t]


def eval_point(app, xs, ys, n, point, with_norms=True):
    subs = dict(zip(list(xs) + list(ys), map(exact, point)))
    out = {
        "point": list(map(float, point)),
        "H": tensor_num([[app["H"][i, j] for j in range(n)] for i in range(n)], subs, 2),
        "gamma": tensor_num(app["Gamma"], subs, 3),
        "torsion": tensor_num(app["T"], subs, 3),
        "R4": tensor_num(app["R4"], subs, 4),
        "ric1": tensor_num(app["Ric1"], subs, 2),
        "ric1_logdet": tensor_num(app["Ric1_logdet"], subs, 2),
        "ric2": tensor_num(app["Ric2"], subs, 2),
        "scalar": cnum(app["scal"], subs),
    }
    if with_norms:
        rm2, t2 = app["_norms"]
        out["rm_norm_sq"] = cnum(rm2, subs)
        out["torsion_norm_sq"] = cnum(t2, subs)
    return out


def check_pairing(app, xs, ys, n, point, tol=1e-24):
    """Hermitian pairing R4[i,j,k,l] == conj(R4[j,i,l,k]) at a point."""
    subs = dict(zip(list(xs) + list(ys), map(exact, point)))
    worst = 0.0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    a = complex(sp.N(app["R4"][i][j][k][l].subs(subs), PREC))
                    b = complex(sp.N(sp.conjugate(app["R4"][j][i][l][k]).subs(subs), PREC))
                    worst = max(worst, abs(a - b))
    assert worst < tol, f"pairing symmetry violated: {worst}"
    return worst


def main():
    out = {}

    # ---- shell metric (delta / |z|^2), n = 2 --------------------------
    n = 2
    xs = sp.symbols("x1 x2", real=True)
    ys = sp.symbols("y1 y2", real=True)
    z = [xs[i] + sp.I * ys[i] for i in range(n)]
    s = sum(xs[i] ** 2 + ys[i] ** 2 for i in range(n))
    H = sp.eye(n) / s
    app = apparatus(H, xs, ys, n)
    app["_norms"] = norms(app, n)

    pts = [
        (1.0, -0.2, 0.3, 0.5),           # |z|^2 = 1.38
        (0.2, 0.7, -1.1, 0.4),           # |z|^2 = 1.90
    ]
    shell = {"points": [eval_point(app, xs, ys, n, p) for p in pts]}
    for p in pts:
        check_pairing(app, xs, ys, n, p)
    # closed-form checks: Ric2 = (n-1) H, scalar = n(n-1), |Rm|^2 = n(n-1),
    # |T|^2 = 2(n-1)
    for rec in shell["points"]:
        sc = rec["scalar"]
        assert abs(sc[0] - n * (n - 1)) < 1e-14 and abs(sc[1]) < 1e-14
        assert abs(rec["rm_norm_sq"][0] - n * (n - 1)) < 1e-13
        assert abs(rec["torsion_norm_sq"][0] - 2 * (n - 1)) < 1e-13
        for i in range(n):
            for j in range(n):
                want = (n - 1) * complex(*rec["H"][i][j])
                got = complex(*rec["ric2"][i][j])
                assert abs(want - got) < 1e-14
    out["shell_n2"] = shell

    # ---- conformally flat metric, n = 2 -------------------------------
    phi = sp.Rational(3, 10) * xs[0] - sp.Rational(1, 5) * ys[1] \
        + sp.Rational(3, 20) * xs[0] * ys[0]
    Hc = sp.exp(phi) * sp.eye(n)
    appc = apparatus(Hc, xs, ys, n)
    appc["_norms"] = norms(appc, n)
    ptsc = [(0.31, -0.22, 0.17, 0.41), (-0.5, 0.1, 0.25, -0.35)]
    conf = {
        "phi": "0.3*x1 - 0.2*y2 + 0.15*x1*y1",
        "points": [eval_point(appc, xs, ys, n, p) for p in ptsc],
    }
    for p in ptsc:
        check_pairing(appc, xs, ys, n, p)
    # closed form: R4[i][j][k][l] = -e^phi * d_i dbar_j phi * delta_kl
    for p, rec in zip(ptsc, conf["points"]):
        subs = dict(zip(list(xs) + list(ys), map(exact, p)))
        for i in range(n):
            for j in range(n):
                lap = complex(sp.N(wirt(wirt(phi, xs, ys, i, False), xs, ys, j, True).subs(subs), PREC))
                eph = complex(sp.N(sp.exp(phi).subs(subs), PREC))
                for k in range(n):
                    for l in range(n):
                        want = -eph * lap * (1 if k == l else 0)
                        got = complex(*rec["R4"][i][j][k][l])
                        assert abs(want - got) < 1e-14
    out["conformal_flat_n2"] = conf

    # ---- Fubini-Study, n = 1 and n = 2 --------------------------------
    for nn in (1, 2):
        xs_n = sp.symbols(f"x1:{nn+1}", real=True)
        ys_n = sp.symbols(f"y1:{nn+1}", real=True)
        zz = [xs_n[i] + sp.I * ys_n[i] for i in range(nn)]
        ss = sum(xs_n[i] ** 2 + ys_n[i] ** 2 for i in range(nn))
        Hf = sp.Matrix(
            nn, nn,
            lambda j, l: (sp.KroneckerDelta(j, l) / (1 + ss)
                          - sp.conjugate(zz[j]) * zz[l] / (1 + ss) ** 2),
        )
        appf = apparatus(Hf, xs_n, ys_n, nn)
        appf["_norms"] = norms(appf, nn)
        ptf = tuple([0.37, -0.21][:nn] + [0.52, 0.11][:nn])
        rec = eval_point(appf, xs_n, ys_n, nn, ptf)
        # Ric1 = (n+1) H, scalar = n(n+1), torsion = 0 (Kahler)
        subs = dict(zip(list(xs_n) + list(ys_n), map(exact, ptf)))
        for i in range(nn):
            for j in range(nn):
                resid = complex(sp.N(
                    (appf["Ric1"][i][j] - (nn + 1) * Hf[i, j]).subs(subs), PREC))
                assert abs(resid) < 1e-24, (nn, i, j, resid)
                for k in range(nn):
                    tv = complex(*rec["torsion"][i][j][k])
                    assert abs(tv) < 1e-24
        sc = complex(*rec["scalar"])
        assert abs(sc - nn * (nn + 1)) < 1e-14
        out[f"fubini_study_n{nn}"] = {"points": [rec]}

    # ---- flat sanity ----------------------------------------------------
    out["flat"] = {"note": "all connection/torsion/curvature arrays vanish"}

    dest = pathlib.Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "curvature_oracle.json"
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps(out, indent=1, sort_keys=True))
    print(f"wrote {dest}")
    print("all symbolic self-checks passed")


if __name__ == "__main__":
    main()
