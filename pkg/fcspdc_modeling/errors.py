"""
Exceptions and warnings raised by fcspdc_modeling.

Every error carries the exit code the command line front end returns when the error reaches it. Input errors
(bad wavelengths, grids, filters, configuration keys) exit with 2, physically infeasible requests exit with 3.
"""


class InputError(ValueError):
    exit_code = 2


class PhysicsError(ValueError):
    exit_code = 3


class OutOfRange(InputError):
    pass


class UnknownAxis(InputError):
    pass


class EnergyMismatch(InputError):
    pass


class GridMismatch(InputError):
    pass


class NonSquareGrid(InputError):
    pass


class EmptyBand(InputError):
    pass


class InvalidConfiguration(InputError):
    pass


class NoPhaseMatch(PhysicsError):
    pass


class BelowCutoff(PhysicsError):
    pass


class ZeroAmplitude(PhysicsError):
    pass


class DivisionByZero(PhysicsError, ZeroDivisionError):
    pass


class Unachievable(PhysicsError):
    pass


class InfeasibleConstraints(PhysicsError):
    pass


class EmptyInterval(PhysicsError):
    pass


class SellmeierExtrapolationWarning(UserWarning):
    pass


class EmptyFilterWarning(UserWarning):
    pass


class ConstraintWarning(UserWarning):
    pass


PARTIAL_SWEEP_EXIT_CODE = 4
