//! Shared domain types: the source configuration, analyzer settings and
//! per-run count tallies.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Pair-number statistics of a single pump pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairDistribution {
    /// Multimode output: `e^{-a} a^n / n!`.
    #[default]
    Poisson,
    /// Single-mode Bose-Einstein output: `a^n / (1 + a)^{n + 1}`.
    Thermal,
}

impl fmt::Display for PairDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairDistribution::Poisson => f.write_str("poisson"),
            PairDistribution::Thermal => f.write_str("thermal"),
        }
    }
}

impl FromStr for PairDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(PairDistribution::Poisson),
            "thermal" => Ok(PairDistribution::Thermal),
            other => Err(Error::invalid(format!(
                "unknown pair distribution `{other}` (expected poisson or thermal)"
            ))),
        }
    }
}

/// Physical configuration of the source and its detection chain.
///
/// Rates are in counts per second, times in seconds. `mixing_p` is the
/// singlet weight of the Werner-form defect seen in the diagonal (A-D)
/// basis; `mixing_p_hv` is the same knob for the natural H-V basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    pub alpha: f64,
    pub eta_signal: f64,
    pub eta_idler: f64,
    pub mixing_p: f64,
    pub mixing_p_hv: f64,
    pub rep_rate: f64,
    pub coinc_window: f64,
    pub dark_rate_signal: f64,
    pub dark_rate_idler: f64,
    pub fluor_fraction: f64,
    pub pair_distribution: PairDistribution,
}

impl Default for SourceParams {
    fn default() -> Self {
        SourceParams {
            alpha: 0.01,
            eta_signal: 0.095,
            eta_idler: 0.095,
            mixing_p: 1.0,
            mixing_p_hv: 1.0,
            rep_rate: 31.1e6,
            coinc_window: 1.8e-9,
            dark_rate_signal: 50.0,
            dark_rate_idler: 50.0,
            fluor_fraction: 0.05,
            pair_distribution: PairDistribution::Poisson,
        }
    }
}

/// Config-file keys, in canonical order.
pub const FIELD_NAMES: [&str; 11] = [
    "alpha",
    "eta_signal",
    "eta_idler",
    "mixing_p",
    "mixing_p_hv",
    "rep_rate",
    "coinc_window",
    "dark_rate_signal",
    "dark_rate_idler",
    "fluor_fraction",
    "pair_distribution",
];

fn check_probability(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(Error::invalid(format!("{name} outside [0, 1]")));
    }
    Ok(())
}

fn check_nonnegative(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::invalid(format!("{name} not finite")));
    }
    if value < 0.0 {
        return Err(Error::invalid(format!("{name} negative")));
    }
    Ok(())
}

impl SourceParams {
    /// An ideal source: no dark counts, no fluorescence, perfect singlet.
    pub fn ideal(alpha: f64, eta: f64) -> Self {
        SourceParams {
            alpha,
            eta_signal: eta,
            eta_idler: eta,
            dark_rate_signal: 0.0,
            dark_rate_idler: 0.0,
            fluor_fraction: 0.0,
            ..SourceParams::default()
        }
    }

    /// Checks every invariant and returns the params unchanged, or names the
    /// first violated one.
    pub fn validate(self) -> Result<Self> {
        check_nonnegative("alpha", self.alpha)?;
        check_probability("eta_signal", self.eta_signal)?;
        check_probability("eta_idler", self.eta_idler)?;
        check_probability("mixing_p", self.mixing_p)?;
        check_probability("mixing_p_hv", self.mixing_p_hv)?;
        check_nonnegative("rep_rate", self.rep_rate)?;
        check_nonnegative("coinc_window", self.coinc_window)?;
        check_nonnegative("dark_rate_signal", self.dark_rate_signal)?;
        check_nonnegative("dark_rate_idler", self.dark_rate_idler)?;
        check_nonnegative("fluor_fraction", self.fluor_fraction)?;
        if self.rep_rate == 0.0 {
            return Err(Error::invalid("rep_rate zero"));
        }
        if self.coinc_window == 0.0 {
            return Err(Error::invalid("coinc_window zero"));
        }
        if self.rep_rate * self.coinc_window > 1.0 {
            return Err(Error::invalid("rep_rate·coinc_window > 1"));
        }
        if self.dark_click_signal() > 1.0 || self.dark_click_idler() > 1.0 {
            return Err(Error::invalid("dark_rate·coinc_window > 1"));
        }
        Ok(self)
    }

    /// Single efficiency for the symmetric closed-form model.
    pub fn symmetric_eta(&self) -> Result<f64> {
        if self.eta_signal != self.eta_idler {
            return Err(Error::invalid(format!(
                "asymmetric efficiencies (eta_signal = {}, eta_idler = {}) are not supported by the closed-form model",
                self.eta_signal, self.eta_idler
            )));
        }
        Ok(self.eta_signal)
    }

    pub fn dark_click_signal(&self) -> f64 {
        self.dark_rate_signal * self.coinc_window
    }

    pub fn dark_click_idler(&self) -> f64 {
        self.dark_rate_idler * self.coinc_window
    }

    /// Copy of these params with `mixing_p` replaced by the defect of `basis`.
    pub fn for_basis(&self, basis: Basis) -> SourceParams {
        SourceParams {
            mixing_p: match basis {
                Basis::HV => self.mixing_p_hv,
                Basis::AD => self.mixing_p,
            },
            ..*self
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> SourceParams {
        SourceParams { alpha, ..*self }
    }

    pub fn with_eta(&self, eta: f64) -> SourceParams {
        SourceParams {
            eta_signal: eta,
            eta_idler: eta,
            ..*self
        }
    }

    /// Sets one field from its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "pair_distribution" {
            self.pair_distribution = value.parse()?;
            return Ok(());
        }
        let slot = match key {
            "alpha" => &mut self.alpha,
            "eta_signal" => &mut self.eta_signal,
            "eta_idler" => &mut self.eta_idler,
            "mixing_p" => &mut self.mixing_p,
            "mixing_p_hv" => &mut self.mixing_p_hv,
            "rep_rate" => &mut self.rep_rate,
            "coinc_window" => &mut self.coinc_window,
            "dark_rate_signal" => &mut self.dark_rate_signal,
            "dark_rate_idler" => &mut self.dark_rate_idler,
            "fluor_fraction" => &mut self.fluor_fraction,
            _ => return Err(Error::invalid(format!("unknown key `{key}`"))),
        };
        *slot = value
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("malformed value `{value}` for `{key}`")))?;
        Ok(())
    }

    /// Canonical text of one field, round-trippable through [`SourceParams::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "alpha" => self.alpha,
            "eta_signal" => self.eta_signal,
            "eta_idler" => self.eta_idler,
            "mixing_p" => self.mixing_p,
            "mixing_p_hv" => self.mixing_p_hv,
            "rep_rate" => self.rep_rate,
            "coinc_window" => self.coinc_window,
            "dark_rate_signal" => self.dark_rate_signal,
            "dark_rate_idler" => self.dark_rate_idler,
            "fluor_fraction" => self.fluor_fraction,
            "pair_distribution" => return Some(self.pair_distribution.to_string()),
            _ => return None,
        };
        // `{:?}` prints the shortest representation that parses back exactly.
        Some(format!("{v:?}"))
    }

    /// Resolved configuration in config-file syntax.
    pub fn to_config_lines(&self) -> Vec<String> {
        FIELD_NAMES
            .iter()
            .map(|k| format!("{k} = {}", self.get(k).expect("known key")))
            .collect()
    }

    /// Configuration fingerprint: first 8 bytes of SHA-256 over the exact
    /// bit patterns of every field.
    pub fn params_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for v in [
            self.alpha,
            self.eta_signal,
            self.eta_idler,
            self.mixing_p,
            self.mixing_p_hv,
            self.rep_rate,
            self.coinc_window,
            self.dark_rate_signal,
            self.dark_rate_idler,
            self.fluor_fraction,
        ] {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher.update([match self.pair_distribution {
            PairDistribution::Poisson => 0u8,
            PairDistribution::Thermal => 1u8,
        }]);
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

/// Linear polarization analysis basis used for interference fringes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Horizontal-vertical, signal analyzer at 0.
    HV,
    /// Diagonal-antidiagonal, signal analyzer at 45 degrees.
    AD,
}

impl Basis {
    pub fn signal_angle(self) -> f64 {
        match self {
            Basis::HV => 0.0,
            Basis::AD => FRAC_PI_4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::HV => "hv",
            Basis::AD => "ad",
        }
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hv" | "h-v" => Ok(Basis::HV),
            "ad" | "a-d" => Ok(Basis::AD),
            other => Err(Error::invalid(format!("unknown basis `{other}`"))),
        }
    }
}

/// Linear analyzer angles (radians from H, positive toward V) for the
/// signal and idler arms. The `ortho_*` flags rotate the corresponding arm
/// by a further π/2, which is how the orthogonal CHSH sub-settings are built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzerPair {
    pub theta_s: f64,
    pub theta_i: f64,
    pub ortho_s: bool,
    pub ortho_i: bool,
}

impl AnalyzerPair {
    pub fn new(theta_s: f64, theta_i: f64) -> Self {
        AnalyzerPair {
            theta_s,
            theta_i,
            ortho_s: false,
            ortho_i: false,
        }
    }

    pub fn from_degrees(theta_s_deg: f64, theta_i_deg: f64) -> Self {
        Self::new(theta_s_deg.to_radians(), theta_i_deg.to_radians())
    }

    pub fn with_ortho(self, ortho_s: bool, ortho_i: bool) -> Self {
        AnalyzerPair {
            ortho_s,
            ortho_i,
            ..self
        }
    }

    pub fn effective_signal(&self) -> f64 {
        self.theta_s + if self.ortho_s { FRAC_PI_2 } else { 0.0 }
    }

    pub fn effective_idler(&self) -> f64 {
        self.theta_i + if self.ortho_i { FRAC_PI_2 } else { 0.0 }
    }
}

/// Which click causes fired on both arms in the same pulse. Categories
/// overlap: one coincidence may be counted in several of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CauseTally {
    /// Pair photons clicked both arms.
    pub pair_pair: u64,
    /// Pair photon on signal, fluorescence on idler.
    pub pair_fluor: u64,
    /// Fluorescence on signal, pair photon on idler.
    pub fluor_pair: u64,
    pub fluor_fluor: u64,
    /// Dark click on signal together with a non-dark click on idler.
    pub dark_signal_cross: u64,
    /// Dark click on idler together with a non-dark click on signal.
    pub dark_idler_cross: u64,
    pub dark_dark: u64,
}

impl CauseTally {
    pub fn merge(&mut self, other: &CauseTally) {
        self.pair_pair += other.pair_pair;
        self.pair_fluor += other.pair_fluor;
        self.fluor_pair += other.fluor_pair;
        self.fluor_fluor += other.fluor_fluor;
        self.dark_signal_cross += other.dark_signal_cross;
        self.dark_idler_cross += other.dark_idler_cross;
        self.dark_dark += other.dark_dark;
    }
}

/// Tallies of one simulated run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountRecord {
    pub pulses: u64,
    pub singles_s: u64,
    pub singles_i: u64,
    pub coincidences: u64,
    pub seed: u64,
    pub params_hash: u64,
    pub generator: &'static str,
    pub causes: CauseTally,
}

impl CountRecord {
    pub fn empty(seed: u64, params_hash: u64, generator: &'static str) -> Self {
        CountRecord {
            pulses: 0,
            singles_s: 0,
            singles_i: 0,
            coincidences: 0,
            seed,
            params_hash,
            generator,
            causes: CauseTally::default(),
        }
    }

    /// Adds the counts of `other`; provenance fields are kept from `self`.
    pub fn merge(&mut self, other: &CountRecord) {
        self.pulses += other.pulses;
        self.singles_s += other.singles_s;
        self.singles_i += other.singles_i;
        self.coincidences += other.coincidences;
        self.causes.merge(&other.causes);
    }
}
