//! Initial-data families and the seeded random corpus.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::lax::ball_check;
use crate::spectral::{Field, Geometry, C64};

/// Highest mode excited by [`random_smooth`].
pub const RANDOM_MAX_MODE: i64 = 8;

/// Named initial-data families.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Zero,
    Constant(f64),
    /// `a cos(2 pi k x / L)`.
    Cosine { a: f64, k: i64 },
    /// `sqrt(c) sech(sqrt(c) (x - x0))`, wrapped to the nearest periodic image.
    Soliton { c: f64, x0: f64 },
    /// Seeded Gaussian Fourier coefficients damped by `(1 + |k|)^{-decay}`.
    RandomSmooth { seed: u64, decay: f64 },
}

impl InitialData {
    pub fn build(&self, g: Geometry) -> Result<Field> {
        Ok(match *self {
            InitialData::Zero => Field::zeros(g),
            InitialData::Constant(c) => Field::constant(g, c),
            InitialData::Cosine { a, k } => cosine(g, a, k)?,
            InitialData::Soliton { c, x0 } => soliton(g, c, x0)?,
            InitialData::RandomSmooth { seed, decay } => random_smooth(g, seed, decay),
        })
    }
}

pub fn cosine(g: Geometry, a: f64, k: i64) -> Result<Field> {
    if k.abs() > g.max_index() {
        return Err(Error::InvalidArgument(format!("mode {k} not resolved on {} points", g.n_modes())));
    }
    let w = g.wavenumber(k);
    Ok(Field::from_fn(g, |x| a * (w * x).cos()))
}

pub fn soliton(g: Geometry, c: f64, x0: f64) -> Result<Field> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("soliton speed must be positive, got {c}")));
    }
    let l = g.period();
    let s = c.sqrt();
    Ok(Field::from_fn(g, |x| {
        let d = (x - x0 + l / 2.0).rem_euclid(l) - l / 2.0;
        s / (s * d).cosh()
    }))
}

/// Random real field with modes `|k| <= RANDOM_MAX_MODE` (capped by the grid).
pub fn random_smooth(g: Geometry, seed: u64, decay: f64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = RANDOM_MAX_MODE.min(g.max_index());
    let mut draws = vec![C64::new(0.0, 0.0); top as usize + 1];
    for (k, z) in draws.iter_mut().enumerate() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let damp = (1.0 + k as f64).powf(-decay);
        // the mean is real for a real field
        *z = if k == 0 { C64::new(re, 0.0) } else { C64::new(re, im) } * damp;
    }
    Field::from_modes(g, |k| {
        if k.abs() > top {
            C64::new(0.0, 0.0)
        } else if k >= 0 {
            draws[k as usize]
        } else {
            draws[(-k) as usize].conj()
        }
    })
}

/// Rescale `q` so that `kappa^{-1/2} ||q|| = radius`.
pub fn scale_into_ball(q: &Field, kappa: f64, radius: f64) -> Result<Field> {
    let b = ball_check(q, kappa);
    if b == 0.0 {
        return Err(Error::InvalidArgument("cannot rescale the zero field".into()));
    }
    Ok(q.scale(radius / b))
}

/// `count` random smooth fields, each with `kappa^{-1/2} ||q||` drawn
/// uniformly from `[radius / 2, radius]`.
pub fn corpus(g: Geometry, seed: u64, count: usize, kappa: f64, radius: f64) -> Result<Vec<Field>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let size = Uniform::new_inclusive(0.5 * radius, radius);
    (0..count)
        .map(|i| {
            let q = random_smooth(g, seed.wrapping_add(i as u64), 4.0);
            scale_into_ball(&q, kappa, size.sample(&mut rng))
        })
        .collect()
}
