"""Catalog of autonomous ODE systems with known parametric form.

Every system is ``x' = f(theta, x)`` with ``x`` in R^d and ``theta`` in a
rectangular parameter box.  Field implementations broadcast: ``theta`` with
shape ``(..., N)`` and ``x`` with shape ``(..., d)`` combine under normal
numpy rules and return ``(..., d)``, which lets the integrator and the
estimators evaluate whole batches of parameter draws in one call.

Systems whose field is *linear* in ``theta`` (f = sum_i theta_i * phi_i(x))
additionally carry the basis functions ``phi_i``, enabling the closed-form
least-squares estimator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError, NumericDomainError, UnsupportedOperationError
from .seeding import substream

CATALOG_VERSION = "1"

# Fixed physical constants of the cart-pole rig.  The drive force must be
# nonzero: with F = 0 the dynamics depend on the masses only through the
# ratio m_p / (m_c + m_p) and the individual masses are not identifiable.
_CARTPOLE_GRAVITY = 9.8
_CARTPOLE_FORCE = 10.0

FieldFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
BasisFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class OdeSystem:
    """One catalog entry.

    Attributes
    ----------
    id : str
        Stable catalog key (also the CLI name).
    name : str
        Human-readable description.
    state_dim, param_dim : int
        d and N.
    field : callable
        ``field(theta, x) -> dx``, broadcasting as described in the module
        docstring.
    param_lo, param_hi : np.ndarray
        Componentwise bounds of the parameter box, ``param_lo < param_hi``.
    x0 : np.ndarray
        Canonical initial condition used by benchmarks.
    t_max : float
        Canonical integration horizon [0, t_max].
    basis : list of callables, optional
        Present iff the field is linear in theta; ``basis[i](x)`` returns the
        d-vector phi_i(x) and ``field(theta, x) == sum_i theta_i * basis[i](x)``.
    chaotic : bool
        Flags systems benchmarked in a narrow band around a chaotic
        configuration (multi-start estimation, +/-5% box).
    """

    id: str
    name: str
    state_dim: int
    param_dim: int
    field: FieldFn
    param_lo: np.ndarray
    param_hi: np.ndarray
    x0: np.ndarray
    t_max: float
    basis: Optional[list] = None
    chaotic: bool = False

    def __post_init__(self):
        self.param_lo = np.asarray(self.param_lo, dtype=float)
        self.param_hi = np.asarray(self.param_hi, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.state_dim < 1 or self.param_dim < 1:
            raise InvalidArgumentError(f"{self.id}: dimensions must be positive")
        if self.param_lo.shape != (self.param_dim,) or self.param_hi.shape != (self.param_dim,):
            raise InvalidArgumentError(f"{self.id}: parameter box shape mismatch")
        if not np.all(self.param_lo < self.param_hi):
            raise InvalidArgumentError(f"{self.id}: parameter box requires lo < hi componentwise")
        if self.x0.shape != (self.state_dim,):
            raise InvalidArgumentError(f"{self.id}: x0 must have shape ({self.state_dim},)")
        if self.basis is not None and len(self.basis) != self.param_dim:
            raise InvalidArgumentError(
                f"{self.id}: linear-in-theta basis needs exactly one function per parameter"
            )

    @property
    def param_midpoint(self) -> np.ndarray:
        """Center of the parameter box (the default optimizer start)."""
        return 0.5 * (self.param_lo + self.param_hi)


@dataclass
class ParameterDraw:
    """A sampled ground-truth parameter vector."""

    system_id: str
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)


# ---------------------------------------------------------------------------
# Field implementations.  Each takes theta (..., N) and x (..., d).
# ---------------------------------------------------------------------------


def _growth(theta, x):
    """Unbounded population growth: x' = th0 * x."""
    return theta[..., 0:1] * x


def _logistic(theta, x):
    """Growth with carrying capacity: x' = th0 * x * (1 - x / th1)."""
    return theta[..., 0:1] * x * (1.0 - x / theta[..., 1:2])


def _fall_drag(theta, x):
    """Falling object with quadratic drag: v' = th0 - th1 * v^2."""
    return theta[..., 0:1] - theta[..., 1:2] * x**2


def _autocatalysis(theta, x):
    """Autocatalysis with one abundant reagent: x' = th0 * x - th1 * x^2."""
    return theta[..., 0:1] * x - theta[..., 1:2] * x**2


def _harmonic(theta, x):
    # Components without theta must still broadcast against batched theta.
    v, p = x[..., 1], x[..., 0]
    return np.stack(np.broadcast_arrays(v, -theta[..., 0] * p), axis=-1)


def _damped_harmonic(theta, x):
    v, p = x[..., 1], x[..., 0]
    return np.stack(
        np.broadcast_arrays(v, -theta[..., 0] * p - theta[..., 1] * v), axis=-1
    )


def _lotka_volterra(theta, x):
    prey, pred = x[..., 0], x[..., 1]
    dprey = prey * (theta[..., 0] - theta[..., 1] * pred)
    dpred = -pred * (theta[..., 2] - theta[..., 3] * prey)
    return np.stack((dprey, dpred), axis=-1)


def _pendulum(theta, x):
    ang, vel = x[..., 0], x[..., 1]
    return np.stack(np.broadcast_arrays(vel, -theta[..., 0] * np.sin(ang)), axis=-1)


def _sir(theta, x):
    s, i = x[..., 0], x[..., 1]
    infect = theta[..., 0] * s * i
    return np.stack((-infect, infect - theta[..., 1] * i), axis=-1)


def _schnakenberg(theta, x):
    u, v = x[..., 0], x[..., 1]
    auto = u**2 * v
    return np.stack((theta[..., 0] + auto - u, theta[..., 1] - auto), axis=-1)


def _lorenz(theta, x):
    a, b = x[..., 0], x[..., 1]
    c = x[..., 2]
    s, r, beta = theta[..., 0], theta[..., 1], theta[..., 2]
    return np.stack((s * (b - a), r * a - a * c - b, -beta * c + a * b), axis=-1)


def _seir(theta, x):
    s, e, i = x[..., 0], x[..., 1], x[..., 2]
    incubation, transmission, recovery = theta[..., 0], theta[..., 1], theta[..., 2]
    exposure = transmission * s * i
    activation = incubation * e
    removal = recovery * i
    ds = -exposure
    de = exposure - activation
    di = activation - removal
    dr = removal
    return np.stack((ds, de, di, dr), axis=-1)


def _cartpole(theta, x):
    """Cart-pole under a constant drive force.

    State is (cart position, cart velocity, pole angle, pole angular
    velocity); parameters are (cart mass, pole mass, pole half-length
    scale).  Angular acceleration is solved first, then substituted into the
    cart acceleration.
    """
    vel, ang, omega = x[..., 1], x[..., 2], x[..., 3]
    m_cart, m_pole, length = theta[..., 0], theta[..., 1], theta[..., 2]
    total = m_cart + m_pole
    sin_a, cos_a = np.sin(ang), np.cos(ang)
    temp = (_CARTPOLE_FORCE + m_pole * length * omega**2 * sin_a) / total
    ang_acc = (_CARTPOLE_GRAVITY * sin_a - cos_a * temp) / (
        length * (4.0 / 3.0 - m_pole * cos_a**2 / total)
    )
    lin_acc = temp - m_pole * length * ang_acc * cos_a / total
    return np.stack(np.broadcast_arrays(vel, lin_acc, omega, ang_acc), axis=-1)


# ---------------------------------------------------------------------------
# Linear-in-theta bases.  basis[i](x) is the d-vector multiplying theta_i.
# ---------------------------------------------------------------------------


def _zeros_like_component(c):
    return np.zeros_like(c)


_GROWTH_BASIS = [lambda x: x]
_FALL_DRAG_BASIS = [lambda x: np.ones_like(x), lambda x: -(x**2)]
_AUTOCATALYSIS_BASIS = [lambda x: x, lambda x: -(x**2)]


def _lv_basis_growth(x):
    prey = x[..., 0]
    return np.stack((prey, _zeros_like_component(prey)), axis=-1)


def _lv_basis_predation(x):
    prod = x[..., 0] * x[..., 1]
    return np.stack((-prod, _zeros_like_component(prod)), axis=-1)


def _lv_basis_mortality(x):
    pred = x[..., 1]
    return np.stack((_zeros_like_component(pred), -pred), axis=-1)


def _lv_basis_conversion(x):
    prod = x[..., 0] * x[..., 1]
    return np.stack((_zeros_like_component(prod), prod), axis=-1)


def _sir_basis_transmission(x):
    prod = x[..., 0] * x[..., 1]
    return np.stack((-prod, prod), axis=-1)


def _sir_basis_recovery(x):
    i = x[..., 1]
    return np.stack((np.zeros_like(i), -i), axis=-1)


def _seir_basis_incubation(x):
    e = x[..., 1]
    z = np.zeros_like(e)
    return np.stack((z, -e, e, z), axis=-1)


def _seir_basis_transmission(x):
    prod = x[..., 0] * x[..., 2]
    z = np.zeros_like(prod)
    return np.stack((-prod, prod, z, z), axis=-1)


def _seir_basis_recovery(x):
    i = x[..., 2]
    z = np.zeros_like(i)
    return np.stack((z, z, -i, i), axis=-1)


_LV_BASIS = [_lv_basis_growth, _lv_basis_predation, _lv_basis_mortality, _lv_basis_conversion]
_SIR_BASIS = [_sir_basis_transmission, _sir_basis_recovery]
_SEIR_BASIS = [_seir_basis_incubation, _seir_basis_transmission, _seir_basis_recovery]


def _box(canonical, factor_lo=0.5, factor_hi=2.0):
    c = np.asarray(canonical, dtype=float)
    return c * factor_lo, c * factor_hi


_LORENZ_CANONICAL = np.array([10.0, 28.0, 8.0 / 3.0])

CATALOG: dict[str, OdeSystem] = {}


def _register(system: OdeSystem) -> None:
    CATALOG[system.id] = system


_register(
    OdeSystem(
        id="ode2",
        name="population growth, unbounded",
        state_dim=1,
        param_dim=1,
        field=_growth,
        param_lo=_box([1.0])[0],
        param_hi=_box([1.0])[1],
        x0=[0.5],
        t_max=2.0,
        basis=_GROWTH_BASIS,
    )
)
_register(
    OdeSystem(
        id="ode3",
        name="population growth with carrying capacity",
        state_dim=1,
        param_dim=2,
        field=_logistic,
        param_lo=_box([1.0, 2.0])[0],
        param_hi=_box([1.0, 2.0])[1],
        x0=[0.1],
        t_max=10.0,
    )
)
_register(
    OdeSystem(
        id="ode5",
        name="falling object with air resistance",
        state_dim=1,
        param_dim=2,
        field=_fall_drag,
        param_lo=_box([9.8, 0.5])[0],
        param_hi=_box([9.8, 0.5])[1],
        x0=[0.0],
        t_max=3.0,
        basis=_FALL_DRAG_BASIS,
    )
)
_register(
    OdeSystem(
        id="ode6",
        name="autocatalysis with one fixed abundant chemical",
        state_dim=1,
        param_dim=2,
        field=_autocatalysis,
        param_lo=_box([1.0, 0.5])[0],
        param_hi=_box([1.0, 0.5])[1],
        x0=[0.1],
        t_max=10.0,
        basis=_AUTOCATALYSIS_BASIS,
    )
)
_register(
    OdeSystem(
        id="ode24",
        name="harmonic oscillator without damping",
        state_dim=2,
        param_dim=1,
        field=_harmonic,
        param_lo=_box([1.0])[0],
        param_hi=_box([1.0])[1],
        x0=[1.0, 0.0],
        t_max=10.0,
    )
)
_register(
    OdeSystem(
        id="ode25",
        name="harmonic oscillator with damping",
        state_dim=2,
        param_dim=2,
        field=_damped_harmonic,
        param_lo=_box([1.0, 0.5])[0],
        param_hi=_box([1.0, 0.5])[1],
        x0=[1.0, 0.0],
        t_max=10.0,
    )
)
_register(
    OdeSystem(
        id="ode27",
        name="Lotka-Volterra predator-prey",
        state_dim=2,
        param_dim=4,
        field=_lotka_volterra,
        param_lo=_box([1.0, 0.5, 1.0, 0.5])[0],
        param_hi=_box([1.0, 0.5, 1.0, 0.5])[1],
        x0=[2.0, 1.0],
        t_max=10.0,
        basis=_LV_BASIS,
    )
)
_register(
    OdeSystem(
        id="ode28",
        name="pendulum without friction",
        state_dim=2,
        param_dim=1,
        field=_pendulum,
        param_lo=_box([2.0])[0],
        param_hi=_box([2.0])[1],
        x0=[1.5, 0.0],
        t_max=10.0,
    )
)
_register(
    OdeSystem(
        id="ode31",
        name="SIR infection dynamics",
        state_dim=2,
        param_dim=2,
        field=_sir,
        param_lo=_box([2.0, 1.0])[0],
        param_hi=_box([2.0, 1.0])[1],
        x0=[0.99, 0.01],
        t_max=10.0,
        basis=_SIR_BASIS,
    )
)
_register(
    OdeSystem(
        id="ode50",
        name="Schnakenberg chemical oscillator",
        state_dim=2,
        param_dim=2,
        field=_schnakenberg,
        param_lo=_box([0.1, 0.9])[0],
        param_hi=_box([0.1, 0.9])[1],
        x0=[1.0, 1.0],
        t_max=20.0,
    )
)
_register(
    OdeSystem(
        id="ode56",
        name="Lorenz attractor",
        state_dim=3,
        param_dim=3,
        field=_lorenz,
        param_lo=_LORENZ_CANONICAL * 0.95,
        param_hi=_LORENZ_CANONICAL * 1.05,
        x0=[1.0, 1.0, 1.0],
        t_max=2.0,
        chaotic=True,
    )
)
_register(
    OdeSystem(
        id="ode63",
        name="SEIR infection dynamics",
        state_dim=4,
        param_dim=3,
        field=_seir,
        param_lo=_box([0.5, 1.5, 0.5])[0],
        param_hi=_box([0.5, 1.5, 0.5])[1],
        x0=[0.97, 0.02, 0.01, 0.0],
        t_max=15.0,
        basis=_SEIR_BASIS,
    )
)
_register(
    OdeSystem(
        id="cartpole",
        name="cart-pole under constant force",
        state_dim=4,
        param_dim=3,
        field=_cartpole,
        param_lo=_box([1.0, 0.1, 0.5])[0],
        param_hi=_box([1.0, 0.1, 0.5])[1],
        x0=[0.0, 0.0, 0.1, 0.0],
        t_max=2.0,
    )
)


def get_system(system_id: str) -> OdeSystem:
    """Look up a catalog entry, raising a helpful error on unknown ids."""
    try:
        return CATALOG[system_id]
    except KeyError:
        known = ", ".join(sorted(CATALOG))
        raise InvalidArgumentError(f"unknown system id {system_id!r}; known ids: {known}") from None


def eval_vector_field(system: OdeSystem, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate f(theta, x) with validation.

    ``theta`` must end in a dimension of size N and ``x`` in a dimension of
    size d; leading dimensions broadcast.  Raises
    :class:`NumericDomainError` (naming the system) if the result is not
    finite.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.shape[-1:] != (system.param_dim,):
        raise InvalidArgumentError(
            f"{system.id}: theta must have trailing dimension {system.param_dim}, "
            f"got shape {theta.shape}"
        )
    if x.shape[-1:] != (system.state_dim,):
        raise InvalidArgumentError(
            f"{system.id}: x must have trailing dimension {system.state_dim}, got shape {x.shape}"
        )
    with np.errstate(all="ignore"):
        out = system.field(theta, x)
    if not np.all(np.isfinite(out)):
        raise NumericDomainError(f"{system.id}: vector field returned non-finite values")
    return out


def sample_parameters(
    system: OdeSystem,
    n: int,
    seed: int,
    box: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> list[ParameterDraw]:
    """Draw ``n`` parameter vectors uniformly from the box.

    A pure function of (system, n, seed): repeated calls return identical
    draws.  ``box`` overrides the catalog box; the override may be degenerate
    (lo == hi), in which case every draw equals lo.
    """
    if n < 1:
        raise InvalidArgumentError("sample_parameters: n must be >= 1")
    if box is None:
        lo, hi = system.param_lo, system.param_hi
    else:
        lo = np.asarray(box[0], dtype=float)
        hi = np.asarray(box[1], dtype=float)
        if lo.shape != (system.param_dim,) or hi.shape != (system.param_dim,):
            raise InvalidArgumentError("sample_parameters: override box shape mismatch")
        if np.any(lo > hi):
            raise InvalidArgumentError("sample_parameters: override box requires lo <= hi")
    rng = substream(seed, "params", system.id)
    u = rng.random((n, system.param_dim))
    thetas = lo + u * (hi - lo)
    return [ParameterDraw(system_id=system.id, theta=t) for t in thetas]


def basis_matrix(system: OdeSystem, states: np.ndarray) -> np.ndarray:
    """Stack basis evaluations into the m x (T*d) design used by closed form.

    Row i holds phi_i evaluated at every grid state, flattened time-major
    then state-component — the same order as flattening the (T, d) state
    array itself.
    """
    if system.basis is None:
        raise UnsupportedOperationError(f"{system.id}: field is not linear in theta (no basis)")
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != system.state_dim:
        raise InvalidArgumentError(
            f"basis_matrix: states must have shape (T, {system.state_dim}), got {states.shape}"
        )
    rows = [np.asarray(phi(states), dtype=float).reshape(-1) for phi in system.basis]
    return np.stack(rows, axis=0)
