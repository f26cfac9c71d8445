"""Reference implementations written independently of the package code.

They favour transparency over speed: scalar loops, textbook formulas and
power series instead of vectorised special functions.
"""
import cmath
import math

import numpy as np


def bessel_j1(u: float) -> float:
    """Power series J1(u) = sum_m (-1)^m (u/2)^(2m+1) / (m! (m+1)!), for |u| below ~10."""
    if abs(u) > 10.0:
        raise ValueError("series oracle is only accurate for small arguments")
    half = u / 2.0
    terms = [(-1) ** m * half ** (2 * m + 1) / (math.factorial(m) * math.factorial(m + 1)) for m in range(40)]
    return math.fsum(terms)


def piston_entry(point, position, normal, k, p_ref, radius) -> complex:
    """One entry of the circular-piston transfer function, evaluated with scalars only."""
    d_vec = [point[i] - position[i] for i in range(3)]
    d = math.sqrt(sum(c * c for c in d_vec))
    dot = sum(d_vec[i] * normal[i] for i in range(3))
    cross = [
        d_vec[1] * normal[2] - d_vec[2] * normal[1],
        d_vec[2] * normal[0] - d_vec[0] * normal[2],
        d_vec[0] * normal[1] - d_vec[1] * normal[0],
    ]
    theta = math.atan2(math.sqrt(sum(c * c for c in cross)), dot)
    u = k * radius * math.sin(theta)
    directivity = 1.0 if u == 0.0 else 2.0 * bessel_j1(u) / u
    return p_ref * directivity * cmath.exp(1j * k * d) / d


def piston_matrix(points, array, k) -> np.ndarray:
    out = np.empty((len(points), len(array.positions)), dtype=complex)
    for n, p in enumerate(points):
        for t, (pos, nrm) in enumerate(zip(array.positions, array.normals)):
            out[n, t] = piston_entry(p, pos, nrm, k, array.p_ref, array.element_radius)
    return out


def gorkov_constants_contrast(rho0, c0, rho_p, c_p, radius, frequency):
    """K1, K2 from the monopole/dipole contrast factors f1, f2.

    U = V [ f1 <p^2> / (2 rho0 c0^2) - 3 rho0 f2 <v^2> / 4 ] with time averages of
    a complex amplitude field: <p^2> = |p|^2/2 and v = grad p / (i omega rho0).
    """
    volume = 4.0 / 3.0 * math.pi * radius**3
    omega = 2.0 * math.pi * frequency
    f1 = 1.0 - (rho0 * c0**2) / (rho_p * c_p**2)
    f2 = 2.0 * (rho_p - rho0) / (2.0 * rho_p + rho0)
    k1 = volume * f1 / (2.0 * rho0 * c0**2) / 2.0
    k2 = 3.0 * rho0 * f2 / 4.0 * volume / (2.0 * omega**2 * rho0**2)
    return k1, k2


def green(x, y, k) -> complex:
    r = math.dist(x, y)
    return cmath.exp(1j * k * r) / (4.0 * math.pi * r)


def central_difference(func, x, step):
    """Central differences of a (possibly complex array valued) function of a real vector."""
    x = np.asarray(x, dtype=float)
    out = []
    for a in range(x.size):
        e = np.zeros(x.size)
        e[a] = step
        out.append((np.asarray(func(x + e)) - np.asarray(func(x - e))) / (2.0 * step))
    return out


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
