from collections.abc import Callable, Sequence
from typing import Literal

import sympy as sp

from fcspdc_modeling.base.utilities import C_UM_PER_FS

SellmeierForm = Literal["kato", "zelmon"]

# Vacuum wavelength in micrometers
LAM = sp.Symbol("lam", positive=True, real=True)
# Temperature offset from the Sellmeier reference temperature, in degrees C
DELTA_T = sp.Symbol("delta_T", real=True)

N_COEFFICIENTS = {"kato": 5, "zelmon": 6}


def sellmeier_n_squared(form: SellmeierForm, coefficients: Sequence[float]) -> sp.Expr:
    """
    Build the symbolic squared refractive index n(lam)^2 of a Sellmeier fit.

    Parameters
    ----------
    form: str
        One of "kato", for n^2 = A + B / (lam^2 - C) + D / (lam^2 - E), or "zelmon", for the three-term
        n^2 = 1 + sum_j A_j lam^2 / (lam^2 - B_j).
    coefficients: sequence of float
        The coefficients in the order they appear in the formula.

    Returns
    -------
    expr: sp.Expr
        Expression in the symbol ``LAM`` (micrometers)
    """
    if form not in N_COEFFICIENTS:
        raise ValueError(f"Unknown Sellmeier form '{form}', expected one of {list(N_COEFFICIENTS)}")
    if len(coefficients) != N_COEFFICIENTS[form]:
        raise ValueError(
            f"Sellmeier form '{form}' takes {N_COEFFICIENTS[form]} coefficients, found {len(coefficients)}"
        )

    c = [sp.Float(x) for x in coefficients]
    if form == "kato":
        a, b, cc, d, e = c
        return a + b / (LAM**2 - cc) + d / (LAM**2 - e)

    terms = [c[i] * LAM**2 / (LAM**2 - c[i + 1]) for i in range(0, 6, 2)]
    return 1 + sp.Add(*terms)


def thermo_optic_shift(n1: Sequence[float], n2: Sequence[float]) -> sp.Expr:
    """
    Symbolic refractive index shift n1(lam) dT + n2(lam) dT^2, with n1, n2 polynomials in 1 / lam.

    The n1 coefficients are in units of 1e-6 and the n2 coefficients in units of 1e-8.
    """
    poly_1 = sp.Add(*[sp.Float(a) / LAM**m for m, a in enumerate(n1)]) * sp.Float(1e-6)
    poly_2 = sp.Add(*[sp.Float(b) / LAM**m for m, b in enumerate(n2)]) * sp.Float(1e-8)
    return poly_1 * DELTA_T + poly_2 * DELTA_T**2


def compile_refractive_index(form: SellmeierForm, coefficients: Sequence[float]) -> Callable:
    """
    Compile n(lam) into a vectorized numpy function of the wavelength in micrometers.
    """
    expr = sp.sqrt(sellmeier_n_squared(form, coefficients))
    return sp.lambdify(LAM, expr, modules="numpy")


def compile_thermo_optic_shift(n1: Sequence[float], n2: Sequence[float]) -> Callable:
    """Compile the thermo-optic shift into a numpy function f(lam_um, delta_T)."""
    return sp.lambdify((LAM, DELTA_T), thermo_optic_shift(n1, n2), modules="numpy")


def compile_inverse_group_velocity(form: SellmeierForm, coefficients: Sequence[float]) -> Callable:
    """
    Closed-form inverse group velocity k' = (n - lam dn/dlam) / c in fs/um, as a function of lam in micrometers.

    Notes
    -----
    The library computes k' by finite differences so that every coefficient set shares one code path. This exact
    derivative is kept as an independent check on that computation.
    """
    n = sp.sqrt(sellmeier_n_squared(form, coefficients))
    expr = (n - LAM * sp.diff(n, LAM)) / C_UM_PER_FS
    return sp.lambdify(LAM, expr, modules="numpy")
