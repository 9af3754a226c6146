//! Two-qubit state tomography from 16 product-projector coincidence counts.
//!
//! The state is parametrised as `rho = T^dag T / Tr(T^dag T)` with `T` lower
//! triangular, so every estimate is a valid density matrix. The unnormalised
//! `M = T^dag T` also absorbs the unknown count scale: the expected count of
//! setting `i` is `Tr(P_i M)`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};

use crate::chsh::sample_poisson;
use crate::error::{Error, Result};
use crate::montecarlo::Simulator;
use crate::rng::{block_rng, derive_seed};
use crate::state::{hermitian_eigen, hermitian_part, Mat4, Polarization, ProductProjector, TwoQubitState, C64};

const DIM: usize = 16;
/// Weight of the identity mixed into the initial guess so that its
/// Cholesky factor exists.
const INIT_MIXING: f64 = 1e-3;
const MAX_RESTARTS: usize = 50;
/// Iterations over which a run must cut its cost by `STALL_GAIN`, relative,
/// before it is handed back for a restart.
const STALL_WINDOW: usize = 50;
const STALL_GAIN: f64 = 1e-3;
/// Relative cost reduction a restart must achieve to be kept.
const RESTART_GAIN: f64 = 1e-6;
const RANK_TOL: f64 = 1e-10;
const LAMBDA_MAX: f64 = 1e20;
/// Damping of nearly flat directions, relative to the stiffest one.
const DIAG_FLOOR: f64 = 1e-6;
/// Expected counts below this are clamped when used as Poisson weights.
const MU_FLOOR: f64 = 1e-3;

/// Lower off-diagonal positions of `T`, in parameter order.
const OFF_DIAGONAL: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

/// Ordered product projectors of a tomography run.
#[derive(Debug, Clone, PartialEq)]
pub struct TomoSettings {
    projectors: Vec<ProductProjector>,
}

impl TomoSettings {
    pub fn new(projectors: Vec<ProductProjector>) -> Result<Self> {
        if projectors.is_empty() {
            return Err(Error::invalid("no tomography settings"));
        }
        Ok(TomoSettings { projectors })
    }

    pub fn projectors(&self) -> &[ProductProjector] {
        &self.projectors
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.projectors.iter().map(ProductProjector::label).collect()
    }

    /// Rows are the settings, columns the 16 Pauli products; entry
    /// `Tr(P_i sigma_j) / 4`.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let paulis = pauli_products();
        DMatrix::from_fn(self.len(), DIM, |i, j| {
            (self.projectors[i].matrix() * paulis[j]).trace().re / 4.0
        })
    }

    pub fn design_rank(&self) -> usize {
        let sv = self.design_matrix().singular_values();
        let max = sv.max();
        sv.iter().filter(|&&s| s > RANK_TOL * max).count()
    }
}

/// `{H, V, D, R}` on each arm, signal-major: `HH, HV, HD, HR, VH, ...`.
pub fn standard_settings() -> TomoSettings {
    let basis = [Polarization::H, Polarization::V, Polarization::D, Polarization::R];
    let projectors = basis
        .iter()
        .flat_map(|&s| basis.iter().map(move |&i| ProductProjector::new(s, i)))
        .collect();
    TomoSettings { projectors }
}

fn pauli_products() -> Vec<Mat4> {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let singles = [
        Matrix2::new(one, z, z, one),
        Matrix2::new(z, one, one, z),
        Matrix2::new(z, -i, i, z),
        Matrix2::new(one, z, z, -one),
    ];
    singles
        .iter()
        .flat_map(|a| singles.iter().map(move |b| a.kronecker(b)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountMode {
    /// Expected counts.
    Exact,
    /// Poisson draws about the expected counts.
    Poisson { seed: u64 },
}

/// Counts `n_per_setting * Tr(P_i rho)`, exact or Poisson-sampled.
pub fn forward_counts(
    state: &TwoQubitState,
    settings: &TomoSettings,
    n_per_setting: f64,
    mode: CountMode,
) -> Result<Vec<f64>> {
    if !(n_per_setting >= 1.0) || !n_per_setting.is_finite() {
        return Err(Error::invalid(format!("n_per_setting {n_per_setting} must be at least 1")));
    }
    let expected = settings
        .projectors
        .iter()
        .map(|p| n_per_setting * state.probability(p).max(0.0));
    match mode {
        CountMode::Exact => Ok(expected.collect()),
        CountMode::Poisson { seed } => {
            let mut rng = block_rng(seed, 0);
            expected.map(|mean| sample_poisson(&mut rng, mean)).collect()
        }
    }
}

/// Monte Carlo coincidence counts, `pulses_per_setting` pulses per setting.
pub fn simulate_counts(sim: &Simulator, settings: &TomoSettings, pulses_per_setting: u64, seed: u64) -> Result<Vec<f64>> {
    settings
        .projectors
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let rec = sim.run_projector(*p, pulses_per_setting, derive_seed(seed, &[k as u64]))?;
            Ok(rec.coincidences as f64)
        })
        .collect()
}

/// Accidental estimate `pulses * P(signal click) * P(idler click)` per
/// setting, from the exact single-arm click probabilities.
pub fn accidental_counts(sim: &Simulator, settings: &TomoSettings, pulses_per_setting: u64) -> Vec<f64> {
    settings
        .projectors
        .iter()
        .map(|p| {
            let r = sim.click_model(*p).exact();
            pulses_per_setting as f64 * r.singles_s * r.singles_i
        })
        .collect()
}

/// Parses `setting,count` rows such as `HV,512`.
pub fn parse_counts_csv(text: &str) -> Result<(TomoSettings, Vec<f64>)> {
    let mut projectors = Vec::new();
    let mut counts = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("setting") {
            continue;
        }
        let lineno = idx + 1;
        let (label, value) = line
            .split_once(',')
            .ok_or_else(|| Error::invalid(format!("line {lineno}: expected `setting,count`")))?;
        let mut chars = label.trim().chars();
        let (Some(s), Some(i), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(Error::invalid(format!("line {lineno}: setting label `{label}` is not two letters")));
        };
        let pol = |ch: char| {
            ch.to_string()
                .parse::<Polarization>()
                .map_err(|_| Error::invalid(format!("line {lineno}: unknown polarization `{ch}`")))
        };
        projectors.push(ProductProjector::new(pol(s)?, pol(i)?));
        let count: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("line {lineno}: malformed count `{}`", value.trim())))?;
        counts.push(count);
    }
    Ok((TomoSettings::new(projectors)?, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cost {
    /// `sum (n_i - mu_i)^2 / max(n_i, 1)`.
    #[default]
    WeightedLeastSquares,
    /// Poisson deviance, minimised by reweighting with `1 / mu_i`.
    PoissonLikelihood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomoOptions {
    pub cost: Cost,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Per-setting accidental counts subtracted before fitting.
    pub accidentals: Option<Vec<f64>>,
}

impl Default for TomoOptions {
    fn default() -> Self {
        TomoOptions {
            cost: Cost::WeightedLeastSquares,
            max_iterations: 10_000,
            tolerance: 1e-10,
            accidentals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomoResult {
    pub rho_hat: TwoQubitState,
    pub fidelity: f64,
    pub tangle: f64,
    pub purity: f64,
    pub fit_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Fitted total of `Tr(M)`, the count scale per complete basis.
    pub scale: f64,
}

/// Reconstruction with the default options.
pub fn reconstruct(counts: &[f64], settings: &TomoSettings) -> Result<TomoResult> {
    reconstruct_with(counts, settings, &TomoOptions::default())
}

pub fn reconstruct_with(counts: &[f64], settings: &TomoSettings, options: &TomoOptions) -> Result<TomoResult> {
    if counts.len() != settings.len() {
        return Err(Error::invalid(format!(
            "{} counts for {} settings",
            counts.len(),
            settings.len()
        )));
    }
    if let Some((k, c)) = counts.iter().enumerate().find(|(_, c)| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::invalid(format!("count {c} of setting {} is not a non-negative number", settings.labels()[k])));
    }
    let rank = settings.design_rank();
    if rank < DIM {
        return Err(Error::invalid(format!("settings are not tomographically complete (rank {rank})")));
    }
    let mut data = counts.to_vec();
    if let Some(acc) = &options.accidentals {
        if acc.len() != counts.len() {
            return Err(Error::invalid(format!("{} accidental entries for {} settings", acc.len(), counts.len())));
        }
        for (d, a) in data.iter_mut().zip(acc) {
            *d = (*d - a).max(0.0);
        }
    }
    if data.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("all tomography counts are zero"));
    }

    let problem = Problem {
        projectors: settings.projectors.iter().map(ProductProjector::matrix).collect(),
        data,
        cost: options.cost,
    };
    let t0 = initial_guess(settings, &problem.data)?;
    let mut fit = problem.minimise(t0, options.max_iterations, options.tolerance)?;
    // A triangular factor can stall where one of its diagonal entries
    // vanishes. Refactoring the current estimate and restarting moves the
    // search off such points; stop once a restart no longer helps.
    for _ in 0..MAX_RESTARTS {
        let budget = options.max_iterations.saturating_sub(fit.iterations);
        if budget == 0 {
            break;
        }
        let Ok(start) = factor(&gram(&t_matrix(&fit.t))) else {
            break;
        };
        let next = problem.minimise(start, budget, options.tolerance)?;
        let improved = next.cost < fit.cost * (1.0 - RESTART_GAIN);
        let iterations = fit.iterations + next.iterations;
        if improved {
            fit = next;
            fit.iterations = iterations;
        } else {
            fit.iterations = iterations;
            fit.converged = true;
            break;
        }
    }

    let m = gram(&t_matrix(&fit.t));
    let scale = m.trace().re;
    if !(scale > 0.0) {
        return Err(Error::numerical(format!(
            "reconstruction collapsed to zero (residual {:e})",
            fit.cost
        )));
    }
    let rho_hat = TwoQubitState::from_matrix(hermitian_part(&m.unscale(scale)))
        .map_err(|e| Error::numerical(format!("reconstructed matrix rejected: {e}")))?;
    Ok(TomoResult {
        fidelity: rho_hat.fidelity_to_singlet(),
        tangle: rho_hat.tangle(),
        purity: rho_hat.purity(),
        rho_hat,
        fit_residual: fit.cost,
        iterations: fit.iterations,
        converged: fit.converged,
        scale,
    })
}

/// Linear inversion, clipped to the PSD cone, mixed with a little identity
/// and factored as `T^dag T`.
fn initial_guess(settings: &TomoSettings, data: &[f64]) -> Result<[f64; DIM]> {
    let a = settings.design_matrix();
    let svd = a.svd(true, true);
    let x = svd
        .solve(&DVector::from_column_slice(data), RANK_TOL)
        .map_err(|e| Error::numerical(format!("linear inversion failed: {e}")))?;
    let paulis = pauli_products();
    let m_lin: Mat4 = paulis
        .iter()
        .zip(x.iter())
        .fold(Mat4::zeros(), |acc, (p, &xj)| acc + p.scale(xj / 4.0));
    let scale = if x[0] > 0.0 { x[0] } else { data.iter().sum::<f64>() / settings.len() as f64 * 4.0 };
    let rho0 = match TwoQubitState::project(&m_lin) {
        Ok(s) => s,
        Err(_) => TwoQubitState::maximally_mixed(),
    };
    factor(&rho0.matrix().scale(scale))
}

/// Lower-triangular parameters of `(1 - e) M + e Tr(M) I / 4`.
///
/// Cholesky of the index-reversed matrix gives an upper factor U with
/// M = U U^dag, so T = U^dag is lower triangular.
fn factor(m: &Mat4) -> Result<[f64; DIM]> {
    let tr = m.trace().re;
    let m0 = hermitian_part(&(m.scale(1.0 - INIT_MIXING) + Mat4::identity().scale(INIT_MIXING * tr / 4.0)));
    let rev = Matrix4::from_fn(|r, c| m0[(3 - r, 3 - c)]);
    let l = rev
        .cholesky()
        .ok_or_else(|| Error::numerical("starting matrix is not positive definite"))?
        .l();
    let u = Matrix4::from_fn(|r, c| l[(3 - r, 3 - c)]);
    let t = u.adjoint();
    let mut params = [0.0; DIM];
    for k in 0..4 {
        params[k] = t[(k, k)].re;
    }
    for (m, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
        params[4 + 2 * m] = t[(r, c)].re;
        params[5 + 2 * m] = t[(r, c)].im;
    }
    Ok(params)
}

fn t_matrix(p: &[f64; DIM]) -> Mat4 {
    let mut t = Mat4::zeros();
    for k in 0..4 {
        t[(k, k)] = C64::new(p[k], 0.0);
    }
    for (m, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
        t[(r, c)] = C64::new(p[4 + 2 * m], p[5 + 2 * m]);
    }
    t
}

fn gram(t: &Mat4) -> Mat4 {
    t.adjoint() * t
}

/// Position and value of the single non-zero entry of `dT / dp_k`.
fn basis_entry(k: usize) -> (usize, usize, C64) {
    if k < 4 {
        (k, k, C64::new(1.0, 0.0))
    } else {
        let (r, c) = OFF_DIAGONAL[(k - 4) / 2];
        let v = if k.is_multiple_of(2) { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) };
        (r, c, v)
    }
}

struct Problem {
    projectors: Vec<Mat4>,
    data: Vec<f64>,
    cost: Cost,
}

struct Fit {
    t: [f64; DIM],
    cost: f64,
    iterations: usize,
    converged: bool,
}

impl Problem {
    fn expected(&self, t: &[f64; DIM]) -> Vec<f64> {
        let m = gram(&t_matrix(t));
        self.projectors.iter().map(|p| (p * m).trace().re).collect()
    }

    fn objective(&self, mu: &[f64]) -> f64 {
        match self.cost {
            Cost::WeightedLeastSquares => mu
                .iter()
                .zip(&self.data)
                .map(|(m, n)| (m - n).powi(2) / n.max(1.0))
                .sum(),
            Cost::PoissonLikelihood => {
                let mut dev = 0.0;
                for (&m, &n) in mu.iter().zip(&self.data) {
                    if n > 0.0 {
                        if m <= 0.0 {
                            return f64::INFINITY;
                        }
                        dev += m - n - n * (m / n).ln();
                    } else {
                        dev += m;
                    }
                }
                2.0 * dev
            }
        }
    }

    fn weights(&self, mu: &[f64]) -> Vec<f64> {
        match self.cost {
            Cost::WeightedLeastSquares => self.data.iter().map(|n| 1.0 / n.max(1.0)).collect(),
            Cost::PoissonLikelihood => mu.iter().map(|m| 1.0 / m.max(MU_FLOOR)).collect(),
        }
    }

    /// `d mu_i / d p_k = 2 Re Tr(P_i T^dag B_k)`.
    fn jacobian(&self, t: &[f64; DIM]) -> DMatrix<f64> {
        let t_adj = t_matrix(t).adjoint();
        let mut j = DMatrix::zeros(self.projectors.len(), DIM);
        for (i, p) in self.projectors.iter().enumerate() {
            let q = p * t_adj;
            for k in 0..DIM {
                let (r, c, v) = basis_entry(k);
                j[(i, k)] = 2.0 * (q[(c, r)] * v).re;
            }
        }
        j
    }

    /// Levenberg-Marquardt on the weighted residuals.
    fn minimise(&self, start: [f64; DIM], max_iterations: usize, tolerance: f64) -> Result<Fit> {
        let mut t = start;
        let mut mu = self.expected(&t);
        let mut cost = self.objective(&mu);
        if !cost.is_finite() {
            return Err(Error::numerical("initial guess has non-finite cost"));
        }
        let scale2: f64 = self.data.iter().map(|n| n * n).sum::<f64>() + 1.0;
        let mut lambda = 1e-3;
        let mut iterations = 0;
        let mut converged = false;
        let mut checkpoint = cost;
        while iterations < max_iterations {
            iterations += 1;
            if iterations % STALL_WINDOW == 0 {
                if checkpoint - cost < STALL_GAIN * checkpoint {
                    break;
                }
                checkpoint = cost;
            }
            let w = self.weights(&mu);
            let jac = self.jacobian(&t);
            let mut jtwj = DMatrix::<f64>::zeros(DIM, DIM);
            let mut jtwr = DVector::<f64>::zeros(DIM);
            for i in 0..self.projectors.len() {
                let row = jac.row(i);
                let r = mu[i] - self.data[i];
                for a in 0..DIM {
                    jtwr[a] += w[i] * row[a] * r;
                    for b in 0..DIM {
                        jtwj[(a, b)] += w[i] * row[a] * row[b];
                    }
                }
            }
            let diag_floor = DIAG_FLOOR * (0..DIM).map(|a| jtwj[(a, a)]).fold(0.0, f64::max);
            let mut accepted = false;
            while lambda < LAMBDA_MAX {
                let mut lhs = jtwj.clone();
                for a in 0..DIM {
                    lhs[(a, a)] += lambda * jtwj[(a, a)].max(diag_floor);
                }
                let Some(chol) = lhs.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let step = chol.solve(&(-&jtwr));
                let mut trial = t;
                for a in 0..DIM {
                    trial[a] += step[a];
                }
                let trial_mu = self.expected(&trial);
                let trial_cost = self.objective(&trial_mu);
                if trial_cost.is_finite() && trial_cost <= cost {
                    let change = cost - trial_cost;
                    t = trial;
                    mu = trial_mu;
                    cost = trial_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if change <= tolerance * cost || cost <= 1e-30 * scale2 {
                        converged = true;
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted {
                // No descent direction left at any damping: a stationary point.
                converged = true;
            }
            if converged {
                break;
            }
        }
        if !cost.is_finite() {
            return Err(Error::numerical(format!("optimizer diverged (best residual {cost:e})")));
        }
        Ok(Fit {
            t,
            cost,
            iterations,
            converged,
        })
    }
}

/// Smallest eigenvalue of a reconstructed state; used by callers that want
/// to double-check positivity.
pub fn min_eigenvalue(state: &TwoQubitState) -> f64 {
    hermitian_eigen(state.matrix()).0.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SourceParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_set_is_complete() {
        let s = standard_settings();
        assert_eq!(s.len(), 16);
        assert_eq!(s.design_rank(), 16);
        assert_eq!(s.labels()[0], "HH");
        assert_eq!(s.labels()[1], "HV");
        assert_eq!(s.labels()[15], "RR");
    }

    #[test]
    fn incomplete_set_is_rejected() {
        let hv = [Polarization::H, Polarization::V];
        let projectors: Vec<_> = hv
            .iter()
            .flat_map(|&a| hv.iter().map(move |&b| ProductProjector::new(a, b)))
            .cycle()
            .take(16)
            .collect();
        let s = TomoSettings::new(projectors).unwrap();
        assert_eq!(s.design_rank(), 4);
        let counts = vec![1.0; 16];
        assert!(reconstruct(&counts, &s).is_err());
    }

    #[test]
    fn singlet_probabilities() {
        let singlet = TwoQubitState::singlet();
        let hv = ProductProjector::new(Polarization::H, Polarization::V);
        let dd = ProductProjector::new(Polarization::D, Polarization::D);
        assert!((singlet.probability(&hv) - 0.5).abs() < 1e-15);
        assert!(singlet.probability(&dd).abs() < 1e-15);
    }

    #[test]
    fn exact_forward_counts() {
        let s = standard_settings();
        let c = forward_counts(&TwoQubitState::singlet(), &s, 1000.0, CountMode::Exact).unwrap();
        assert!((c[1] - 500.0).abs() < 1e-9);
        let m = forward_counts(&TwoQubitState::maximally_mixed(), &s, 1000.0, CountMode::Exact).unwrap();
        assert!(m.iter().all(|x| (x - 250.0).abs() < 1e-9));
        assert!(forward_counts(&TwoQubitState::singlet(), &s, 0.5, CountMode::Exact).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = TwoQubitState::random_hilbert_schmidt(&mut rng);
        let s = standard_settings();
        let counts = forward_counts(&state, &s, 1000.0, CountMode::Exact).unwrap();
        let problem = Problem {
            projectors: s.projectors.iter().map(ProductProjector::matrix).collect(),
            data: counts.clone(),
            cost: Cost::WeightedLeastSquares,
        };
        let t = initial_guess(&s, &counts).unwrap();
        let jac = problem.jacobian(&t);
        let h = 1e-6;
        for k in 0..DIM {
            let mut up = t;
            up[k] += h;
            let mut dn = t;
            dn[k] -= h;
            let (mu_up, mu_dn) = (problem.expected(&up), problem.expected(&dn));
            for i in 0..16 {
                let fd = (mu_up[i] - mu_dn[i]) / (2.0 * h);
                assert!((fd - jac[(i, k)]).abs() < 1e-5 * (1.0 + fd.abs()), "i={i} k={k}");
            }
        }
    }

    #[test]
    fn initial_guess_reproduces_state() {
        let w = TwoQubitState::werner(0.7);
        let s = standard_settings();
        let counts = forward_counts(&w, &s, 500.0, CountMode::Exact).unwrap();
        let t = initial_guess(&s, &counts).unwrap();
        let m = gram(&t_matrix(&t));
        // Sum over H/V on both arms is one complete basis.
        assert!((m.trace().re - 500.0).abs() < 1e-6);
        let rho = TwoQubitState::from_matrix(hermitian_part(&m.unscale(m.trace().re))).unwrap();
        assert!(rho.fidelity(&w) > 0.9999);
    }

    #[test]
    fn singlet_round_trip() {
        let s = standard_settings();
        let counts = forward_counts(&TwoQubitState::singlet(), &s, 1000.0, CountMode::Exact).unwrap();
        let r = reconstruct(&counts, &s).unwrap();
        assert!(r.fidelity >= 0.999, "{}", r.fidelity);
        assert!(r.tangle >= 0.996, "{}", r.tangle);
        assert!((r.rho_hat.trace() - 1.0).abs() < 1e-12);
        assert!(min_eigenvalue(&r.rho_hat) > -1e-12);
    }

    #[test]
    fn werner_round_trip() {
        let s = standard_settings();
        let p = 0.9847;
        let counts = forward_counts(&TwoQubitState::werner(p), &s, 1000.0, CountMode::Exact).unwrap();
        for cost in [Cost::WeightedLeastSquares, Cost::PoissonLikelihood] {
            let r = reconstruct_with(&counts, &s, &TomoOptions { cost, ..TomoOptions::default() }).unwrap();
            let f_oracle = (3.0 * p + 1.0) / 4.0;
            let t_oracle = ((3.0 * p - 1.0) / 2.0_f64).powi(2);
            assert!((r.fidelity - 0.9885).abs() < 0.002 && (r.fidelity - f_oracle).abs() < 1e-6, "{cost:?} {}", r.fidelity);
            assert!((r.tangle - 0.954).abs() < 0.01 && (r.tangle - t_oracle).abs() < 1e-5, "{cost:?} {}", r.tangle);
        }
    }

    #[test]
    fn random_states_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let s = standard_settings();
        for k in 0..50 {
            let state = TwoQubitState::random_hilbert_schmidt(&mut rng);
            let counts = forward_counts(&state, &s, 1e4, CountMode::Exact).unwrap();
            let r = reconstruct(&counts, &s).unwrap();
            let f = r.rho_hat.fidelity(&state);
            assert!(f >= 0.999, "state {k}: fidelity {f}");
        }
    }

    #[test]
    fn poisson_singlet_trials() {
        let s = standard_settings();
        let singlet = TwoQubitState::singlet();
        let good = (0..100)
            .filter(|&seed| {
                let counts = forward_counts(&singlet, &s, 30_000.0, CountMode::Poisson { seed }).unwrap();
                reconstruct(&counts, &s).unwrap().fidelity >= 0.995
            })
            .count();
        assert!(good >= 95, "{good}/100");
    }

    #[test]
    fn more_data_reconstructs_better() {
        let s = standard_settings();
        let w = TwoQubitState::werner(0.9);
        let mean = |n: f64| {
            (0..100)
                .map(|seed| {
                    let counts = forward_counts(&w, &s, n, CountMode::Poisson { seed: seed + 1000 }).unwrap();
                    reconstruct(&counts, &s).unwrap().rho_hat.fidelity(&w)
                })
                .sum::<f64>()
                / 100.0
        };
        let (lo, hi) = (mean(1e3), mean(1e5));
        assert!(hi >= lo, "{hi} < {lo}");
    }

    #[test]
    fn accidental_subtraction_recovers_mixing() {
        let params = SourceParams {
            mixing_p: 0.95,
            ..SourceParams::default()
        };
        let sim = Simulator::new(params).unwrap();
        let s = standard_settings();
        let pulses = 31_100_000;
        let counts: Vec<f64> = s
            .projectors()
            .iter()
            .map(|p| pulses as f64 * sim.click_model(*p).exact().coincidences)
            .collect();
        let raw = reconstruct(&counts, &s).unwrap();
        let options = TomoOptions {
            accidentals: Some(accidental_counts(&sim, &s, pulses)),
            ..TomoOptions::default()
        };
        let corrected = reconstruct_with(&counts, &s, &options).unwrap();
        let target = (3.0 * 0.95 + 1.0) / 4.0;
        assert!(raw.fidelity < target);
        assert!((corrected.fidelity - target).abs() < (raw.fidelity - target).abs());
    }

    #[test]
    fn counts_csv_round_trip() {
        let s = standard_settings();
        let counts = forward_counts(&TwoQubitState::werner(0.8), &s, 100.0, CountMode::Exact).unwrap();
        let mut text = String::from("setting,count\n");
        for (l, c) in s.labels().iter().zip(&counts) {
            text.push_str(&format!("{l},{c}\n"));
        }
        let (parsed, parsed_counts) = parse_counts_csv(&text).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(parsed_counts, counts);
        assert!(parse_counts_csv("HXV,3\n").is_err());
        assert!(parse_counts_csv("HV;3\n").is_err());
    }

    #[test]
    fn count_length_mismatch() {
        let s = standard_settings();
        assert!(reconstruct(&[1.0; 15], &s).is_err());
        assert!(reconstruct(&[0.0; 16], &s).is_err());
        let mut bad = [1.0; 16];
        bad[3] = -1.0;
        assert!(reconstruct(&bad, &s).is_err());
    }
}
