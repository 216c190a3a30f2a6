"""Independent oracle for the frozen constants in the C++ tests.

Uses mpmath/scipy only; shares no code with the library. Run:
    python3 tests/oracles/derive_values.py
"""
import itertools
from fractions import Fraction

import mpmath as mp
from scipy import integrate

mp.mp.dps = 30


def position_canonical(t=1000):
    s = mp.mpf(t)
    return s / (2 * (1 + s * s)) + mp.atan(s) / 2


def lq_lhs(d, gamma, q, vnorm):
    # ∫ |y - v|^{gamma-1} <y>^{-q} dy in R^3, polar about v.
    assert d == 3

    def inner(r):
        f = lambda th: (1 + vnorm**2 + r * r + 2 * vnorm * r * mp.cos(th)) ** (-q / 2) * mp.sin(th)
        return 2 * mp.pi * mp.quad(f, [0, mp.pi])

    return mp.quad(lambda r: r ** (gamma - 1 + 2) * inner(r), [0, 1, max(1, vnorm), 2 * max(1, vnorm) + 1, mp.inf])


def ltilde_lhs(d, q, vnorm):
    return lq_lhs(d, 2 - d, q, vnorm)


def sphere(d):
    area = lambda n: 2 * mp.pi ** ((n + 1) / mp.mpf(2)) / mp.gamma((n + 1) / mp.mpf(2))
    return area(d - 2) * mp.quad(lambda th: mp.sin(th) ** (d - 3), [0, mp.pi])


def uq_at_zero(gamma, q):
    def ang(r):
        g = lambda th: ((1 + r * r * (1 + mp.cos(th)) / 2) * (1 + r * r * (1 - mp.cos(th)) / 2)) ** (-q / 2)
        return 2 * mp.pi * mp.quad(g, [0, mp.pi / 2, mp.pi])

    return 4 * mp.pi * mp.quad(lambda r: r ** (gamma + 1) * ang(r), [0, 1, 4, mp.inf])


def ball_mass_reference(p=4, q=5):
    # ∫_{|x|^2+|v|^2<=1} <x>^{-p}<v>^{-q} dx dv / (I_p I_q), d = 3, alpha = beta = 1.
    Ip = mp.pi**1.5 * mp.gamma((p - 3) / 2) / mp.gamma(p / 2)
    Iq = mp.pi**1.5 * mp.gamma((q - 3) / 2) / mp.gamma(q / 2)
    f = lambda a, b: 16 * mp.pi**2 * a * a * b * b * (1 + a * a) ** (-p / 2) * (1 + b * b) ** (-q / 2)
    val = mp.quad(lambda a: mp.quad(lambda b: f(a, b), [0, mp.sqrt(1 - a * a)]), [0, 1])
    return val / (Ip * Iq)


def polygaussian_norm(alpha, p=4, q=5, beta=1, mass=1):
    Ip = mp.pi**1.5 * mp.gamma((p - 3) / 2) / mp.gamma(p / 2)
    amp = mass * alpha**3 / Ip * mp.pi ** (-1.5)
    sup = mp.findroot(lambda r: mp.diff(lambda s: (1 + beta**2 * s * s) ** (q / 2) * mp.e ** (-s * s), r), 1.2)
    return amp * (1 + beta**2 * sup**2) ** (q / 2) * mp.e ** (-sup * sup)


def is_echelon(mu, k):
    # mu[i] is the partner of particle k+1+i; echelon = nondecreasing.
    return all(mu[i] <= mu[i + 1] for i in range(len(mu) - 1))


def echelon_count(k, n):
    maps = itertools.product(*[range(1, k + i + 1) for i in range(n)])
    return sum(1 for m in maps if is_echelon(m, k))


def decay(k, n, ratio, C, norm_F):
    r = Fraction(ratio)
    return 2 * Fraction(norm_F) * (Fraction(2) / (r * Fraction(C))) ** k * (Fraction(4) / r) ** n


if __name__ == "__main__":
    print("position canonical", mp.nstr(position_canonical(), 20))
    print("Lq v=0 (3,1,5)", mp.nstr(lq_lhs(3, 1, 5, 0), 20), "4pi/3", mp.nstr(4 * mp.pi / 3, 20))
    print("Lq |v|=3 (3,1,5)", mp.nstr(lq_lhs(3, 1, 5, 3), 20))
    print("Lq bound (3,1,5)", mp.nstr(8 * mp.pi * (mp.mpf(1) / 3 + mp.mpf(1) / 2), 20))
    print("Ltilde q=4 |v|=1", mp.nstr(ltilde_lhs(3, 4, 1), 20))
    for d in (3, 4, 5):
        print("sphere", d, mp.nstr(sphere(d), 20))
    print("I_4 in d=3", mp.nstr(mp.pi**1.5 * mp.gamma(0.5) / mp.gamma(2), 20))
    print("Uq(0) gamma=1 q=3.5", mp.nstr(uq_at_zero(1, 3.5), 12))
    print("Uq(0) gamma=0 q=2.5", mp.nstr(uq_at_zero(0, 2.5), 12))
    print("ball mass", mp.nstr(ball_mass_reference(), 20))
    print("polygaussian norm a=0.05", mp.nstr(polygaussian_norm(0.05), 20))
    print("polygaussian norm a=0.06", mp.nstr(polygaussian_norm(0.06), 20))
    for k in (1, 2):
        print("echelon counts k=%d" % k, [echelon_count(k, n) for n in range(1, 6)])
    print("decay k=1 n=0..3 ratio 8 C 1613", [str(decay(1, n, 8, 1613, 1)) for n in range(4)])
    print("Lq |v|=3 (3,0,5)", mp.nstr(lq_lhs(3, 0, 5, 3), 20))
    print("Lq |v|=2 (3,-1,4)", mp.nstr(lq_lhs(3, -1, 4, 2), 20))
