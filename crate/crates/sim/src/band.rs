use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub const DEFAULT_P_LO: f64 = 0.001;
pub const DEFAULT_P_HI: f64 = 0.999;

/// Below this many degrees of freedom Wilson–Hilferty misses the lower tail
/// by more than 0.3%, so the quantile is inverted numerically instead.
const APPROXIMATION_MIN_DOF: usize = 32;

/// Interval of code norms that a unit Gaussian in `D` dimensions hits with
/// probability `p_hi - p_lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBand {
    pub lo: f64,
    pub hi: f64,
}

impl NormBand {
    pub fn contains(&self, norm: f64) -> bool {
        norm >= self.lo && norm <= self.hi
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.lo, self.hi]
    }
}

fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Quantile of the chi-square distribution with `dof` degrees of freedom.
///
/// Closed form for one and two degrees of freedom, numerical inversion up to
/// 31, Wilson–Hilferty above.
pub fn chi2_quantile(dof: usize, p: f64) -> f64 {
    assert!(dof >= 1, "chi-square needs at least one degree of freedom");
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    match dof {
        1 => std_normal_quantile(0.5 + p / 2.0).powi(2),
        2 => -2.0 * (-p).ln_1p(),
        k if k < APPROXIMATION_MIN_DOF => ChiSquared::new(k as f64).expect("positive degrees of freedom").inverse_cdf(p),
        _ => {
            let k = dof as f64;
            let s = 2.0 / (9.0 * k);
            let cube = 1.0 - s + std_normal_quantile(p) * s.sqrt();
            k * cube.max(0.0).powi(3)
        }
    }
}

/// Norm band `[sqrt(chi2(D, p_lo)), sqrt(chi2(D, p_hi))]`.
pub fn rho_band(dim: usize, p_lo: f64, p_hi: f64) -> NormBand {
    assert!(p_lo < p_hi, "band levels out of order");
    NormBand { lo: chi2_quantile(dim, p_lo).sqrt(), hi: chi2_quantile(dim, p_hi).sqrt() }
}

pub fn default_band(dim: usize) -> NormBand {
    rho_band(dim, DEFAULT_P_LO, DEFAULT_P_HI)
}
