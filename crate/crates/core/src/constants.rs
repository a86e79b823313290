//! CODATA 2018 constants in SI units.

/// Physical constants used throughout the simulator.
///
/// `g_factor` is stored with its physical (negative) sign. Rotation angles and
/// magnitudes that should not depend on the sense of precession use
/// [`PhysicalConstants::g_abs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub m_e: f64,
    pub e: f64,
    pub mu_b: f64,
    pub g_factor: f64,
    pub eps0: f64,
    pub mu0: f64,
}

pub const HBAR: f64 = 1.054_571_817e-34;
pub const M_E: f64 = 9.109_383_701_5e-31;
pub const E_CHARGE: f64 = 1.602_176_634e-19;
pub const G_FACTOR: f64 = -2.002_319_304_362_56;
pub const EPS0: f64 = 8.854_187_812_8e-12;
pub const MU0: f64 = 1.256_637_062_12e-6;

impl PhysicalConstants {
    pub const fn codata() -> Self {
        Self {
            hbar: HBAR,
            m_e: M_E,
            e: E_CHARGE,
            mu_b: E_CHARGE * HBAR / (2.0 * M_E),
            g_factor: G_FACTOR,
            eps0: EPS0,
            mu0: MU0,
        }
    }

    #[inline]
    pub fn g_abs(&self) -> f64 {
        self.g_factor.abs()
    }

    /// Planck constant `h = 2πħ`.
    #[inline]
    pub fn planck(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.hbar
    }

    /// Electron-volt in joules.
    #[inline]
    pub fn ev(&self) -> f64 {
        self.e
    }

    /// Wavenumber of a de Broglie wavelength.
    #[inline]
    pub fn wavenumber(&self, lambda: f64) -> f64 {
        2.0 * std::f64::consts::PI / lambda
    }

    /// Group velocity `ħk/m` of a packet with de Broglie wavelength `lambda`.
    #[inline]
    pub fn de_broglie_velocity(&self, lambda: f64) -> f64 {
        self.hbar * self.wavenumber(lambda) / self.m_e
    }

    /// Kinetic energy `ħ²k²/2m` in joules.
    #[inline]
    pub fn kinetic_energy(&self, lambda: f64) -> f64 {
        let k = self.wavenumber(lambda);
        self.hbar * self.hbar * k * k / (2.0 * self.m_e)
    }

    /// `e²/(4πε₀)` in J·m.
    #[inline]
    pub fn coulomb_constant_e2(&self) -> f64 {
        self.e * self.e / (4.0 * std::f64::consts::PI * self.eps0)
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::codata()
    }
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants::codata();

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bohr_magneton_matches_definition() {
        let c = PhysicalConstants::codata();
        let expected = c.e * c.hbar / (2.0 * c.m_e);
        assert!(((c.mu_b - expected) / expected).abs() < 1e-12);
        // CODATA 2018 tabulated value
        assert!(((c.mu_b - 9.274_010_078_3e-24) / c.mu_b).abs() < 1e-9);
    }

    #[test]
    fn g_factor_is_negative() {
        let c = PhysicalConstants::codata();
        assert!(c.g_factor < 0.0);
        assert_eq!(c.g_abs(), -c.g_factor);
    }

    #[test]
    fn coulomb_constant_in_ev_nm() {
        let c = PhysicalConstants::codata();
        let ev_nm = c.coulomb_constant_e2() / c.e / 1e-9;
        assert!((ev_nm - 1.439_964_5).abs() < 1e-6);
    }

    #[test]
    fn twenty_ev_electron() {
        let c = PhysicalConstants::codata();
        let lambda = 2.73e-10;
        let e0 = c.kinetic_energy(lambda) / c.e;
        // 2.73 Å corresponds to ~20.2 eV
        assert!((e0 - 20.18).abs() < 0.01, "{e0}");
        assert!((c.de_broglie_velocity(lambda) - 2.6646e6).abs() < 1e3);
    }
}
