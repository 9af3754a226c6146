//! Two-qubit polarization states.
//!
//! Density matrices are 4x4 in the product basis `{HH, HV, VH, VV}` with
//! the signal photon first. Linear analyzer angles are measured from H,
//! positive toward V. Right circular is `R = (H - iV)/sqrt(2)`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, Matrix2, Matrix4, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::AnalyzerPair;

pub type C64 = Complex<f64>;
pub type Mat4 = Matrix4<C64>;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
/// Most negative eigenvalue a state may carry before it is rejected.
pub const PSD_TOL: f64 = 1e-10;

fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Single-photon polarization state used by analyzers and projectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Polarization {
    H,
    V,
    /// Diagonal, +45 degrees.
    D,
    /// Antidiagonal, -45 degrees.
    A,
    R,
    L,
    /// Linear polarization at the given angle (radians).
    Linear(f64),
}

impl Polarization {
    pub fn jones(self) -> Vector2<C64> {
        let s = FRAC_1_SQRT_2;
        match self {
            Polarization::H => Vector2::new(c(1.0, 0.0), c(0.0, 0.0)),
            Polarization::V => Vector2::new(c(0.0, 0.0), c(1.0, 0.0)),
            Polarization::D => Vector2::new(c(s, 0.0), c(s, 0.0)),
            Polarization::A => Vector2::new(c(s, 0.0), c(-s, 0.0)),
            Polarization::R => Vector2::new(c(s, 0.0), c(0.0, -s)),
            Polarization::L => Vector2::new(c(s, 0.0), c(0.0, s)),
            Polarization::Linear(theta) => Vector2::new(c(theta.cos(), 0.0), c(theta.sin(), 0.0)),
        }
    }

    pub fn orthogonal(self) -> Polarization {
        match self {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
            Polarization::D => Polarization::A,
            Polarization::A => Polarization::D,
            Polarization::R => Polarization::L,
            Polarization::L => Polarization::R,
            Polarization::Linear(theta) => Polarization::Linear(theta + FRAC_PI_2),
        }
    }

    pub fn projector(self) -> Matrix2<C64> {
        let j = self.jones();
        j * j.adjoint()
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::H => f.write_str("H"),
            Polarization::V => f.write_str("V"),
            Polarization::D => f.write_str("D"),
            Polarization::A => f.write_str("A"),
            Polarization::R => f.write_str("R"),
            Polarization::L => f.write_str("L"),
            Polarization::Linear(t) => write!(f, "{}deg", t.to_degrees()),
        }
    }
}

impl FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "H" | "h" => Polarization::H,
            "V" | "v" => Polarization::V,
            "D" | "d" => Polarization::D,
            "A" | "a" => Polarization::A,
            "R" | "r" => Polarization::R,
            "L" | "l" => Polarization::L,
            other => return Err(Error::invalid(format!("unknown polarization `{other}`"))),
        })
    }
}

/// Product projector `|a><a| (x) |b><b|` on signal and idler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductProjector {
    pub signal: Polarization,
    pub idler: Polarization,
}

impl ProductProjector {
    pub fn new(signal: Polarization, idler: Polarization) -> Self {
        ProductProjector { signal, idler }
    }

    pub fn matrix(&self) -> Mat4 {
        self.signal.projector().kronecker(&self.idler.projector())
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.signal, self.idler)
    }
}

impl From<AnalyzerPair> for ProductProjector {
    fn from(a: AnalyzerPair) -> Self {
        ProductProjector::new(
            Polarization::Linear(a.effective_signal()),
            Polarization::Linear(a.effective_idler()),
        )
    }
}

/// Hermitian eigendecomposition `(eigenvalues, eigenvectors)`.
pub(crate) fn hermitian_eigen(m: &Mat4) -> (Vector4<f64>, Mat4) {
    let eig = m.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Eigenvalues below this are rounding noise and are treated as zero before
/// square roots are taken; otherwise a 1e-17 residue becomes a 3e-9 error.
const EIGEN_FLOOR: f64 = 1e-14;

fn floored_sqrt(v: f64) -> f64 {
    if v < EIGEN_FLOOR {
        0.0
    } else {
        v.sqrt()
    }
}

/// Square root of a Hermitian PSD matrix.
fn psd_sqrt(m: &Mat4) -> Mat4 {
    let (vals, vecs) = hermitian_eigen(m);
    let d = Matrix4::from_diagonal(&vals.map(|v| c(floored_sqrt(v), 0.0)));
    vecs * d * vecs.adjoint()
}

pub(crate) fn hermitian_part(m: &Mat4) -> Mat4 {
    (m + m.adjoint()).scale(0.5)
}

/// A validated two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Mat4,
}

impl TwoQubitState {
    /// Validates `rho`: Hermitian, unit trace, positive semidefinite.
    ///
    /// Eigenvalues between `-PSD_TOL` and zero are clipped and the result
    /// renormalised; anything more negative is rejected.
    pub fn from_matrix(rho: Mat4) -> Result<Self> {
        let asym = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > HERMITIAN_TOL {
            return Err(Error::invalid(format!("density matrix not Hermitian (deviation {asym:e})")));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::invalid(format!("density matrix trace {tr} != 1")));
        }
        let rho = hermitian_part(&rho);
        let (vals, vecs) = hermitian_eigen(&rho);
        let min = vals.min();
        if min < -PSD_TOL {
            return Err(Error::invalid(format!(
                "density matrix not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        if min < 0.0 {
            return Ok(Self::from_spectrum(&vals, &vecs));
        }
        Ok(TwoQubitState { rho })
    }

    /// Nearest state obtained by clipping negative eigenvalues of the
    /// Hermitian part of `m` and normalising the trace.
    pub fn project(m: &Mat4) -> Result<Self> {
        let (vals, vecs) = hermitian_eigen(&hermitian_part(m));
        if vals.iter().all(|&v| v <= 0.0) {
            return Err(Error::numerical("matrix has no positive eigenvalue"));
        }
        Ok(Self::from_spectrum(&vals, &vecs))
    }

    fn from_spectrum(vals: &Vector4<f64>, vecs: &Mat4) -> Self {
        let clipped = vals.map(|v| v.max(0.0));
        let total: f64 = clipped.sum();
        let d = Matrix4::from_diagonal(&clipped.map(|v| c(v / total, 0.0)));
        TwoQubitState {
            rho: hermitian_part(&(vecs * d * vecs.adjoint())),
        }
    }

    pub fn pure(psi: Vector4<C64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::invalid("zero state vector"));
        }
        let psi = psi.unscale(norm);
        Ok(TwoQubitState { rho: psi * psi.adjoint() })
    }

    /// `(|HV> - |VH>)/sqrt(2)`.
    pub fn singlet() -> Self {
        let s = FRAC_1_SQRT_2;
        let psi = Vector4::new(c(0.0, 0.0), c(s, 0.0), c(-s, 0.0), c(0.0, 0.0));
        TwoQubitState { rho: psi * psi.adjoint() }
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitState {
            rho: Mat4::identity().scale(0.25),
        }
    }

    /// `p |psi-><psi-| + (1 - p) I/4`; `p` is clamped to `[0, 1]`.
    pub fn werner(p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        TwoQubitState {
            rho: Self::singlet().rho.scale(p) + Self::maximally_mixed().rho.scale(1.0 - p),
        }
    }

    pub fn product(signal: Polarization, idler: Polarization) -> Self {
        TwoQubitState {
            rho: ProductProjector::new(signal, idler).matrix(),
        }
    }

    /// Hilbert-Schmidt random state: `G G^dag / Tr` with complex Gaussian `G`.
    pub fn random_hilbert_schmidt<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let g = Mat4::from_fn(|_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        let m = g * g.adjoint();
        let tr = m.trace().re;
        TwoQubitState {
            rho: hermitian_part(&m.unscale(tr)),
        }
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.rho
    }

    pub fn eigenvalues(&self) -> Vector4<f64> {
        hermitian_eigen(&self.rho).0
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    /// `Tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// `Tr(rho P)` for a product projector.
    pub fn probability(&self, projector: &ProductProjector) -> f64 {
        (self.rho * projector.matrix()).trace().re
    }

    /// Coincidence probability behind two linear analyzers.
    pub fn coincidence_prob(&self, analyzers: &AnalyzerPair) -> f64 {
        self.probability(&ProductProjector::from(*analyzers))
    }

    pub fn fidelity_to_singlet(&self) -> f64 {
        (self.rho * Self::singlet().rho).trace().re
    }

    /// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
    pub fn fidelity(&self, other: &TwoQubitState) -> f64 {
        let s = psd_sqrt(&self.rho);
        let inner = hermitian_part(&(s * other.rho * s));
        let (vals, _) = hermitian_eigen(&inner);
        let t: f64 = vals.iter().map(|&v| floored_sqrt(v)).sum();
        t * t
    }

    /// Wootters concurrence.
    pub fn concurrence(&self) -> f64 {
        let sy = Matrix2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0));
        let yy = sy.kronecker(&sy);
        let flipped = yy * self.rho.conjugate() * yy;
        // The eigenvalues of rho * flipped equal those of the Hermitian
        // sqrt(rho) flipped sqrt(rho).
        let s = psd_sqrt(&self.rho);
        let r = hermitian_part(&(s * flipped * s));
        let (vals, _) = hermitian_eigen(&r);
        let mut lambdas: Vec<f64> = vals.iter().map(|&v| floored_sqrt(v)).collect();
        lambdas.sort_by(|a, b| b.total_cmp(a));
        (lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0)
    }

    /// Squared concurrence.
    pub fn tangle(&self) -> f64 {
        self.concurrence().powi(2)
    }

    /// `(U_s (x) U_i) rho (U_s (x) U_i)^dag`.
    pub fn apply_local(&self, u_signal: &Matrix2<C64>, u_idler: &Matrix2<C64>) -> Self {
        let u = u_signal.kronecker(u_idler);
        TwoQubitState {
            rho: hermitian_part(&(u * self.rho * u.adjoint())),
        }
    }

    /// Row-major `(re, im)` entries.
    pub fn to_entries(&self) -> [(f64, f64); 16] {
        let mut out = [(0.0, 0.0); 16];
        for r in 0..4 {
            for col in 0..4 {
                let z = self.rho[(r, col)];
                out[4 * r + col] = (z.re, z.im);
            }
        }
        out
    }

    pub fn from_entries(entries: &[(f64, f64)]) -> Result<Self> {
        if entries.len() != 16 {
            return Err(Error::invalid(format!("expected 16 entries, found {}", entries.len())));
        }
        Self::from_matrix(Mat4::from_fn(|r, col| {
            let (re, im) = entries[4 * r + col];
            c(re, im)
        }))
    }

    /// CSV text: header `entry,re,im` then 16 rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("entry,re,im\n");
        for (i, (re, im)) in self.to_entries().iter().enumerate() {
            s.push_str(&format!("{i},{re:?},{im:?}\n"));
        }
        s
    }

    /// Parses the output of [`TwoQubitState::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::with_capacity(16);
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') || line.starts_with("entry") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::invalid(format!("malformed state row `{line}`")));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("malformed number `{s}`")))
            };
            entries.push((parse(fields[1])?, parse(fields[2])?));
        }
        Self::from_entries(&entries)
    }
}

/// Haar-random 2x2 unitary.
pub fn random_unitary2<R: Rng + ?Sized>(rng: &mut R) -> Matrix2<C64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (a, b, cc, d) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix2::new(c(a, b), c(cc, d), c(-cc, d), c(a, -b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn assert_valid(s: &TwoQubitState) {
        let m = s.matrix();
        let asym = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(asym <= 1e-12);
        assert!((s.trace() - 1.0).abs() <= 1e-12);
        assert!(s.eigenvalues().min() >= -PSD_TOL);
    }

    #[test]
    fn singlet_entries() {
        let s = TwoQubitState::singlet();
        let m = s.matrix();
        let diag: Vec<f64> = (0..4).map(|i| m[(i, i)].re).collect();
        assert!((diag[1] - 0.5).abs() < 1e-15 && (diag[2] - 0.5).abs() < 1e-15);
        assert!(diag[0].abs() < 1e-15 && diag[3].abs() < 1e-15);
        assert!((m[(1, 2)].re + 0.5).abs() < 1e-15);
        assert!((s.purity() - 1.0).abs() < 1e-14);
        assert_valid(&s);
    }

    #[test]
    fn werner_family() {
        assert_eq!(TwoQubitState::werner(1.0), TwoQubitState::singlet());
        let mixed = TwoQubitState::werner(0.0);
        for v in mixed.eigenvalues().iter() {
            assert!((v - 0.25).abs() < 1e-14);
        }
        let f = TwoQubitState::werner(0.9847).fidelity_to_singlet();
        assert!((f - (3.0 * 0.9847 + 1.0) / 4.0).abs() < 1e-14);
        assert!((f - 0.9885).abs() < 1e-4);
    }

    #[test]
    fn singlet_coincidences() {
        let s = TwoQubitState::singlet();
        assert!(s.coincidence_prob(&AnalyzerPair::new(0.0, 0.0)).abs() < 1e-15);
        assert!((s.coincidence_prob(&AnalyzerPair::new(0.0, FRAC_PI_2)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn werner_fringe_closed_form() {
        for p in [0.0, 0.3, 0.9, 0.9847, 1.0] {
            let w = TwoQubitState::werner(p);
            for i in 0..24 {
                let ts = 0.3 * i as f64;
                let ti = -0.17 * i as f64 + 0.4;
                let d = ts - ti;
                let expected = p / 2.0 * d.sin().powi(2) + (1.0 - p) / 4.0;
                let got = w.coincidence_prob(&AnalyzerPair::new(ts, ti));
                assert!((got - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fringe_visibility_equals_werner_weight() {
        for p in [0.2, 0.75, 0.9811, 1.0] {
            let w = TwoQubitState::werner(p);
            let grid: Vec<f64> = (0..=3600).map(|i| PI * i as f64 / 3600.0).collect();
            let probs: Vec<f64> = grid
                .iter()
                .map(|&t| w.coincidence_prob(&AnalyzerPair::new(FRAC_PI_4, t)))
                .collect();
            let max = probs.iter().cloned().fold(f64::MIN, f64::max);
            let min = probs.iter().cloned().fold(f64::MAX, f64::min);
            assert!(((max - min) / (max + min) - p).abs() < 1e-10);
        }
    }

    #[test]
    fn analyzer_period_is_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = TwoQubitState::random_hilbert_schmidt(&mut rng);
            let a = AnalyzerPair::new(rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0);
            let p0 = s.coincidence_prob(&a);
            let p1 = s.coincidence_prob(&AnalyzerPair::new(a.theta_s + PI, a.theta_i));
            let p2 = s.coincidence_prob(&AnalyzerPair::new(a.theta_s, a.theta_i - PI));
            assert!((p0 - p1).abs() < 1e-13 && (p0 - p2).abs() < 1e-13);
        }
    }

    #[test]
    fn singlet_rotational_invariance() {
        let s = TwoQubitState::singlet();
        for i in 0..30 {
            let d = 0.1 * i as f64;
            let reference = s.coincidence_prob(&AnalyzerPair::new(d, 0.0));
            for j in 0..30 {
                let offset = 0.37 * j as f64;
                let got = s.coincidence_prob(&AnalyzerPair::new(d + offset, offset));
                assert!((got - reference).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn four_outcomes_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = TwoQubitState::random_hilbert_schmidt(&mut rng);
            let theta = rng.random::<f64>() * PI;
            let theta_i = rng.random::<f64>() * PI;
            let total: f64 = [(false, false), (false, true), (true, false), (true, true)]
                .iter()
                .map(|&(a, b)| s.coincidence_prob(&AnalyzerPair::new(theta, theta_i).with_ortho(a, b)))
                .sum();
            assert!((total - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn fidelity_examples() {
        assert!((TwoQubitState::singlet().fidelity_to_singlet() - 1.0).abs() < 1e-14);
        let hh = TwoQubitState::product(Polarization::H, Polarization::H);
        assert!(hh.fidelity_to_singlet().abs() < 1e-15);
        let s = TwoQubitState::singlet();
        assert!((s.fidelity(&s) - 1.0).abs() < 1e-7);
        assert!(s.fidelity(&hh).abs() < 1e-12);
        // Pure target: Uhlmann fidelity reduces to the overlap.
        let w = TwoQubitState::werner(0.8);
        assert!((s.fidelity(&w) - w.fidelity_to_singlet()).abs() < 1e-7);
    }

    #[test]
    fn tangle_examples() {
        assert!((TwoQubitState::singlet().tangle() - 1.0).abs() < 1e-7);
        let hh = TwoQubitState::product(Polarization::H, Polarization::H);
        assert!(hh.tangle().abs() < 1e-12);
        for p in [0.0, 0.2, 1.0 / 3.0, 0.5, 0.9, 0.986, 1.0] {
            let expected = ((3.0 * p - 1.0) / 2.0f64).max(0.0).powi(2);
            assert!((TwoQubitState::werner(p).tangle() - expected).abs() < 1e-7, "p={p}");
        }
        assert!((TwoQubitState::werner(0.986).tangle() - 0.958).abs() < 1e-3);
    }

    #[test]
    fn tangle_invariant_under_local_unitaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for state in [TwoQubitState::singlet(), TwoQubitState::werner(0.9)] {
            let t0 = state.tangle();
            for _ in 0..20 {
                let rotated = state.apply_local(&random_unitary2(&mut rng), &random_unitary2(&mut rng));
                assert!((rotated.tangle() - t0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn psd_clipping_and_rejection() {
        let mut m = *TwoQubitState::singlet().matrix();
        // Slightly negative eigenvalue within tolerance.
        m[(0, 0)] -= c(2e-11, 0.0);
        m[(3, 3)] += c(2e-11, 0.0);
        m[(0, 3)] += c(5e-11, 0.0);
        m[(3, 0)] += c(5e-11, 0.0);
        let s = TwoQubitState::from_matrix(m).unwrap();
        assert_valid(&s);

        let mut bad = *TwoQubitState::singlet().matrix();
        bad[(0, 0)] = c(-0.1, 0.0);
        bad[(3, 3)] = c(0.1, 0.0);
        assert!(TwoQubitState::from_matrix(bad).is_err());

        let mut non_herm = *TwoQubitState::singlet().matrix();
        non_herm[(0, 1)] = c(0.1, 0.0);
        assert!(TwoQubitState::from_matrix(non_herm).is_err());
    }

    #[test]
    fn random_states_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_valid(&TwoQubitState::random_hilbert_schmidt(&mut rng));
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = TwoQubitState::random_hilbert_schmidt(&mut rng);
        let back = TwoQubitState::from_csv(&s.to_csv()).unwrap();
        assert_eq!(s.to_entries(), back.to_entries());
    }

    #[test]
    fn projectors_idempotent() {
        for p in [
            Polarization::H,
            Polarization::V,
            Polarization::D,
            Polarization::A,
            Polarization::R,
            Polarization::L,
            Polarization::Linear(0.3),
        ] {
            let m = p.projector();
            assert!((m * m - m).norm() < 1e-15);
            assert!((m.trace().re - 1.0).abs() < 1e-15);
            let perp = p.orthogonal().projector();
            assert!((m * perp).norm() < 1e-15);
        }
    }
}
