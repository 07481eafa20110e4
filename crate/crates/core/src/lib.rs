//! Numerical laboratory for the method of commuting flows applied to the
//! real-valued modified KdV equation
//!
//! ```text
//! q_t = -q''' + 6 mu q^2 q'
//! ```
//!
//! on the circle or on a large torus standing in for the line.
//!
//! * [`spectral`]: periodic grids, Fourier multipliers, Sobolev norms and
//!   dealiased products.
//! * [`lax`]: truncated-Fourier Lax operator, resolvent and the diagonal
//!   Green's-function diagnostics `gamma`, `p`, `r`.
//! * [`functionals`]: mass, energy, the trace functional `A(kappa, q)`,
//!   brackets, variational derivatives and the equicontinuity multiplier.
//! * [`flows`]: exponential Runge-Kutta time stepping for the mKdV,
//!   renormalized mKdV, mass, `H_kappa` and difference flows.
//! * [`inverse_map`]: fixed-point inversion of `q -> (mu / 4 kappa) r(kappa)`.

pub mod error;
pub mod fit;
pub mod flows;
pub mod functionals;
pub mod initial;
pub mod inverse_map;
pub mod lax;
pub mod spectral;

pub use error::{Error, Result};
pub use spectral::{C64, Dealias, Field, Geometry, GeometryKind, Multiplier, SobolevIndex};

/// Sign of the nonlinearity: `+1` defocusing, `-1` focusing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mu {
    Defocusing,
    Focusing,
}

impl Mu {
    pub fn value(self) -> f64 {
        match self {
            Mu::Defocusing => 1.0,
            Mu::Focusing => -1.0,
        }
    }

    pub fn both() -> [Mu; 2] {
        [Mu::Defocusing, Mu::Focusing]
    }
}

impl TryFrom<i32> for Mu {
    type Error = Error;

    fn try_from(v: i32) -> Result<Self> {
        match v {
            1 => Ok(Mu::Defocusing),
            -1 => Ok(Mu::Focusing),
            _ => Err(Error::InvalidArgument(format!("mu must be +1 or -1, got {v}"))),
        }
    }
}
