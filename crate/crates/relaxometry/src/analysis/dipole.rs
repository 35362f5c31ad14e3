//! Electric dipole moment of a defect from its measured coupling strength.
//!
//! A two-level defect driven by an oscillating electric field of amplitude
//! `E₀` couples with Rabi-style matrix element `g = p·E₀ / (2ħ)` (with `g`
//! expressed as an angular rate). Inverting for the dipole moment with `g`
//! quoted in Hz:
//!
//! ```text
//! p = 2 ħ (2π g) / E₀
//! ```

use crate::error::{Error, Result};

/// Reduced Planck constant, J·s (2019 SI exact value of h over 2π).
const HBAR_J_S: f64 = 1.054_571_817e-34;
/// Elementary charge times one ångström, C·m.
const E_ANGSTROM_C_M: f64 = 1.602_176_634e-29;
/// One debye in C·m.
const DEBYE_C_M: f64 = 3.335_64e-30;

/// A dipole moment in the three unit systems in common use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleMoment {
    pub coulomb_m: f64,
    pub e_angstrom: f64,
    pub debye: f64,
}

/// Convert a measured coupling `g` (Hz) and drive field amplitude (V/m)
/// into the defect's electric dipole moment.
///
/// # Errors
///
/// [`Error::InvalidInput`] when either argument is non-finite or the field
/// amplitude is not positive.
pub fn dipole_moment(g_hz: f64, field_v_per_m: f64) -> Result<DipoleMoment> {
    if !g_hz.is_finite() || !field_v_per_m.is_finite() || field_v_per_m <= 0.0 {
        return Err(Error::InvalidInput(
            "dipole conversion needs finite g and a positive field amplitude".into(),
        ));
    }
    let coulomb_m = 2.0 * HBAR_J_S * (2.0 * std::f64::consts::PI * g_hz) / field_v_per_m;
    Ok(DipoleMoment {
        coulomb_m,
        e_angstrom: coulomb_m / E_ANGSTROM_C_M,
        debye: coulomb_m / DEBYE_C_M,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_coupling_maps_to_expected_dipole() {
        // 55 kHz coupling at 3.8 V/m drive amplitude.
        let d = dipole_moment(55.0e3, 3.8).unwrap();
        assert_relative_eq!(d.coulomb_m, 1.918e-29, max_relative = 1e-3);
        assert_relative_eq!(d.e_angstrom, 1.197, max_relative = 1e-3);
        assert_relative_eq!(d.debye, 5.750, max_relative = 1e-3);
    }

    #[test]
    fn dipole_scales_linearly_with_coupling_and_inverse_field() {
        let base = dipole_moment(50.0e3, 2.0).unwrap();
        let double_g = dipole_moment(100.0e3, 2.0).unwrap();
        let double_f = dipole_moment(50.0e3, 4.0).unwrap();
        assert_relative_eq!(double_g.coulomb_m, 2.0 * base.coulomb_m, max_relative = 1e-12);
        assert_relative_eq!(double_f.coulomb_m, 0.5 * base.coulomb_m, max_relative = 1e-12);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(dipole_moment(f64::NAN, 1.0).is_err());
        assert!(dipole_moment(1.0e3, 0.0).is_err());
        assert!(dipole_moment(1.0e3, -2.0).is_err());
    }
}
