//! Benchmark machinery behind the `ttkit` binary: case-set generators,
//! the case runner with oracle verification, and CSV/JSON reporting.

pub mod cases;
pub mod run;

pub use cases::{dump_custom_cases, gen_set1, gen_set2, load_custom_cases, BenchSpec, Case};
pub use run::{run_bench, BenchRecord, RunConfig, SelectionMode, Summary};

use ttkit::{Error, Result};

/// Arithmetic intensity of a contraction with operand volumes `vol_d`,
/// `vol_l`, `vol_r`: `2 sqrt(vol_d vol_l vol_r) / (vol_d + vol_l + vol_r)`.
pub fn arithmetic_intensity(vol_d: f64, vol_l: f64, vol_r: f64) -> Result<f64> {
    if !(vol_d > 0.0 && vol_l > 0.0 && vol_r > 0.0) {
        return Err(Error::InvalidModelInput(
            "contraction volumes must be positive".into(),
        ));
    }
    Ok(2.0 * (vol_d * vol_l * vol_r).sqrt() / (vol_d + vol_l + vol_r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_intensity_direct() {
        assert_eq!(arithmetic_intensity(9.0, 9.0, 9.0).unwrap(), 2.0);
        assert!(arithmetic_intensity(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn arithmetic_intensity_symmetry() {
        for v in [1.0f64, 4.0, 100.0, 729.0] {
            let ai = arithmetic_intensity(v, v, v).unwrap();
            assert!((ai - 2.0 / 3.0 * v.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn arithmetic_intensity_scales_as_sqrt() {
        let base = arithmetic_intensity(5.0, 7.0, 11.0).unwrap();
        let scaled = arithmetic_intensity(20.0, 28.0, 44.0).unwrap();
        assert!((scaled - 2.0 * base).abs() < 1e-12);
    }
}
