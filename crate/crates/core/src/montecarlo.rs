//! Pulse-by-pulse simulation of the source and detection chain.
//!
//! Each pulse carries a random number of independent pairs. Every pair
//! draws its joint analyzer outcome from the Werner-form state, photons that
//! pass are detected with the efficiency of their arm, and each arm also
//! sees unpolarized fluorescence photons and dark clicks. Detectors do not
//! resolve photon number: an arm clicks if anything was detected, and two
//! clicks in one pulse form a coincidence.
//!
//! Two samplers implement this chain. [`Simulator::run_literal`] follows the
//! steps above one pulse at a time. [`Simulator::run`] samples the same
//! distribution faster: by Poisson (or geometric) thinning only pairs that
//! lead to at least one detection are drawn, and pulses in which nothing
//! clicks are skipped with geometric gaps. Both are keyed per block of
//! [`BLOCK_PULSES`] pulses, so results do not depend on the shard count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::multipair::pair_weights;
use crate::params::{AnalyzerPair, CountRecord, PairDistribution, SourceParams};
use crate::rng::{block_rng, GENERATOR};
use crate::state::{ProductProjector, TwoQubitState};

/// Pulses per RNG block.
pub const BLOCK_PULSES: u64 = 1 << 20;

/// Cumulative table for inverse-transform sampling of small integers.
#[derive(Debug, Clone)]
struct DiscreteTable {
    cumulative: Vec<f64>,
}

impl DiscreteTable {
    fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        DiscreteTable { cumulative }
    }

    fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Index whose cumulative weight first exceeds `u * total`.
    fn sample(&self, u: f64) -> usize {
        let target = u * self.total();
        let idx = self.cumulative.partition_point(|&c| c <= target);
        idx.min(self.cumulative.len().saturating_sub(1))
    }
}

/// Probability generating function `E[x^N]` of the pair number.
fn pgf(dist: PairDistribution, mean: f64, x: f64) -> f64 {
    match dist {
        PairDistribution::Poisson => (-mean * (1.0 - x)).exp(),
        PairDistribution::Thermal => 1.0 / (1.0 + mean * (1.0 - x)),
    }
}

/// Which causes made an arm click.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArmCauses {
    pub pair: bool,
    pub fluorescence: bool,
    pub dark: bool,
}

impl ArmCauses {
    pub fn fired(&self) -> bool {
        self.pair || self.fluorescence || self.dark
    }
}

/// Result of one pulse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PulseOutcome {
    /// Pairs sampled in this pulse. The thinned sampler only draws pairs
    /// that produced at least one detection, and counts only those.
    pub n_pairs: u32,
    pub detected_s: bool,
    pub detected_i: bool,
    pub signal: ArmCauses,
    pub idler: ArmCauses,
}

impl PulseOutcome {
    fn from_causes(n_pairs: u32, signal: ArmCauses, idler: ArmCauses) -> Self {
        PulseOutcome {
            n_pairs,
            detected_s: signal.fired(),
            detected_i: idler.fired(),
            signal,
            idler,
        }
    }
}

/// Exact per-pulse probabilities for one analyzer setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactRates {
    pub singles_s: f64,
    pub singles_i: f64,
    pub coincidences: f64,
    /// Probability that pair photons click each arm on their own.
    pub pair_click_s: f64,
    pub pair_click_i: f64,
    pub fluor_click_s: f64,
    pub fluor_click_i: f64,
    pub dark_click_s: f64,
    pub dark_click_i: f64,
    pub pair_pair: f64,
    pub pair_fluor: f64,
    pub fluor_pair: f64,
    pub fluor_fluor: f64,
    pub dark_signal_cross: f64,
    pub dark_idler_cross: f64,
    pub dark_dark: f64,
}

/// Per-pulse click model of one configuration and analyzer setting.
#[derive(Debug, Clone)]
pub struct ClickModel {
    dist: PairDistribution,
    alpha: f64,
    eta_s: f64,
    eta_i: f64,
    /// Joint analyzer outcomes of one pair: (pass, pass), (pass, block),
    /// (block, pass), (block, block).
    analyzer: [f64; 4],
    /// Detection outcomes of one pair: both, signal only, idler only, none.
    detection: [f64; 4],
    fluor_mean: f64,
    fluor_click_s: f64,
    fluor_click_i: f64,
    dark_s: f64,
    dark_i: f64,
}

impl ClickModel {
    pub fn new(params: &SourceParams, projector: ProductProjector) -> Self {
        let state = TwoQubitState::werner(params.mixing_p);
        let (s, i) = (projector.signal, projector.idler);
        let analyzer = [
            ProductProjector::new(s, i),
            ProductProjector::new(s, i.orthogonal()),
            ProductProjector::new(s.orthogonal(), i),
            ProductProjector::new(s.orthogonal(), i.orthogonal()),
        ]
        .map(|p| state.probability(&p).max(0.0));
        let (es, ei) = (params.eta_signal, params.eta_idler);
        let [pp, pb, bp, _] = analyzer;
        let both = pp * es * ei;
        let s_only = pp * es * (1.0 - ei) + pb * es;
        let i_only = pp * (1.0 - es) * ei + bp * ei;
        let none = (1.0 - both - s_only - i_only).max(0.0);
        let fluor_mean = params.fluor_fraction * params.alpha;
        ClickModel {
            dist: params.pair_distribution,
            alpha: params.alpha,
            eta_s: es,
            eta_i: ei,
            analyzer,
            detection: [both, s_only, i_only, none],
            fluor_mean,
            // Unpolarized: each fluorescence photon passes with probability 1/2.
            fluor_click_s: -(-fluor_mean * 0.5 * es).exp_m1(),
            fluor_click_i: -(-fluor_mean * 0.5 * ei).exp_m1(),
            dark_s: params.dark_click_signal(),
            dark_i: params.dark_click_idler(),
        }
    }

    pub fn analyzer_outcomes(&self) -> [f64; 4] {
        self.analyzer
    }

    /// Closed-form expectations via the pair-number generating function.
    pub fn exact(&self) -> ExactRates {
        let [both, s_only, i_only, none] = self.detection;
        let g = |x: f64| pgf(self.dist, self.alpha, x);
        let no_pair_s = g(1.0 - both - s_only);
        let no_pair_i = g(1.0 - both - i_only);
        let no_pair_either = g(none);
        let pair_s = 1.0 - no_pair_s;
        let pair_i = 1.0 - no_pair_i;
        let (fs, fi, ds, di) = (self.fluor_click_s, self.fluor_click_i, self.dark_s, self.dark_i);
        let quiet_s = no_pair_s * (1.0 - fs) * (1.0 - ds);
        let quiet_i = no_pair_i * (1.0 - fi) * (1.0 - di);
        let quiet_both = no_pair_either * (1.0 - fs) * (1.0 - fi) * (1.0 - ds) * (1.0 - di);
        ExactRates {
            singles_s: 1.0 - quiet_s,
            singles_i: 1.0 - quiet_i,
            coincidences: 1.0 - quiet_s - quiet_i + quiet_both,
            pair_click_s: pair_s,
            pair_click_i: pair_i,
            fluor_click_s: fs,
            fluor_click_i: fi,
            dark_click_s: ds,
            dark_click_i: di,
            pair_pair: 1.0 - no_pair_s - no_pair_i + no_pair_either,
            pair_fluor: pair_s * fi,
            fluor_pair: fs * pair_i,
            fluor_fluor: fs * fi,
            dark_signal_cross: ds * (1.0 - no_pair_i * (1.0 - fi)),
            dark_idler_cross: di * (1.0 - no_pair_s * (1.0 - fs)),
            dark_dark: ds * di,
        }
    }
}

/// Precomputed tables of the thinned sampler.
struct FastSampler {
    /// Distribution of pairs with at least one detection; index 0 is m = 0.
    detecting: DiscreteTable,
    /// Same, restricted to m >= 1 (index 0 is m = 1).
    detecting_nonzero: DiscreteTable,
    /// Outcome of a detecting pair: both, signal only, idler only.
    outcome: DiscreteTable,
    /// Trivial (nothing happens) probability of each component: detecting
    /// pairs, fluorescence s, fluorescence i, dark s, dark i.
    trivial: [f64; 5],
    /// Unnormalised weights for "component j is the first non-trivial one".
    first: DiscreteTable,
    /// ln P(pulse with no click at all).
    ln_quiet: f64,
}

impl FastSampler {
    fn new(model: &ClickModel) -> Result<Self> {
        let [both, s_only, i_only, none] = model.detection;
        let detecting_mean = model.alpha * (1.0 - none);
        let weights = pair_weights(detecting_mean, model.dist)?;
        let ln_pairs_quiet = match model.dist {
            PairDistribution::Poisson => -detecting_mean,
            PairDistribution::Thermal => -detecting_mean.ln_1p(),
        };
        let ln_trivial = [
            ln_pairs_quiet,
            -model.fluor_mean * 0.5 * model.eta_s,
            -model.fluor_mean * 0.5 * model.eta_i,
            (-model.dark_s).ln_1p(),
            (-model.dark_i).ln_1p(),
        ];
        let trivial = ln_trivial.map(f64::exp);
        let mut prefix: f64 = 0.0;
        let mut first = [0.0; 5];
        for j in 0..5 {
            first[j] = prefix.exp() * -ln_trivial[j].exp_m1();
            prefix += ln_trivial[j];
        }
        Ok(FastSampler {
            detecting: DiscreteTable::new(&weights),
            detecting_nonzero: DiscreteTable::new(if weights.len() > 1 { &weights[1..] } else { &[0.0] }),
            outcome: DiscreteTable::new(&[both, s_only, i_only]),
            trivial,
            first: DiscreteTable::new(&first),
            ln_quiet: prefix,
        })
    }

    fn sample_pairs(&self, rng: &mut ChaCha8Rng, forced: bool, s: &mut ArmCauses, i: &mut ArmCauses) -> u32 {
        let m = if forced {
            self.detecting_nonzero.sample(rng.random()) + 1
        } else {
            self.detecting.sample(rng.random())
        };
        for _ in 0..m {
            match self.outcome.sample(rng.random()) {
                0 => {
                    s.pair = true;
                    i.pair = true;
                }
                1 => s.pair = true,
                _ => i.pair = true,
            }
        }
        m as u32
    }

    /// Samples a pulse conditioned on at least one click.
    fn sample_active(&self, rng: &mut ChaCha8Rng) -> PulseOutcome {
        let first = self.first.sample(rng.random());
        let mut s = ArmCauses::default();
        let mut i = ArmCauses::default();
        let mut n_pairs = 0;
        for j in first..5 {
            let fires = j == first || rng.random::<f64>() >= self.trivial[j];
            match j {
                0 => n_pairs = self.sample_pairs(rng, j == first, &mut s, &mut i),
                1 => s.fluorescence = fires,
                2 => i.fluorescence = fires,
                3 => s.dark = fires,
                _ => i.dark = fires,
            }
        }
        PulseOutcome::from_causes(n_pairs, s, i)
    }
}

/// Literal per-pulse sampler.
struct LiteralSampler {
    pairs: DiscreteTable,
    fluorescence: DiscreteTable,
    analyzer: DiscreteTable,
    eta_s: f64,
    eta_i: f64,
    dark_s: f64,
    dark_i: f64,
}

impl LiteralSampler {
    fn new(model: &ClickModel) -> Result<Self> {
        Ok(LiteralSampler {
            pairs: DiscreteTable::new(&pair_weights(model.alpha, model.dist)?),
            fluorescence: DiscreteTable::new(&pair_weights(model.fluor_mean, PairDistribution::Poisson)?),
            analyzer: DiscreteTable::new(&model.analyzer),
            eta_s: model.eta_s,
            eta_i: model.eta_i,
            dark_s: model.dark_s,
            dark_i: model.dark_i,
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> PulseOutcome {
        let mut s = ArmCauses::default();
        let mut i = ArmCauses::default();
        let n = self.pairs.sample(rng.random());
        for _ in 0..n {
            let outcome = self.analyzer.sample(rng.random());
            let pass_s = outcome == 0 || outcome == 1;
            let pass_i = outcome == 0 || outcome == 2;
            if pass_s && rng.random::<f64>() < self.eta_s {
                s.pair = true;
            }
            if pass_i && rng.random::<f64>() < self.eta_i {
                i.pair = true;
            }
        }
        for (arm, eta) in [(&mut s, self.eta_s), (&mut i, self.eta_i)] {
            let photons = self.fluorescence.sample(rng.random());
            for _ in 0..photons {
                if rng.random::<f64>() < 0.5 && rng.random::<f64>() < eta {
                    arm.fluorescence = true;
                }
            }
        }
        s.dark = rng.random::<f64>() < self.dark_s;
        i.dark = rng.random::<f64>() < self.dark_i;
        PulseOutcome::from_causes(n as u32, s, i)
    }
}

fn tally(record: &mut CountRecord, o: &PulseOutcome) {
    record.singles_s += u64::from(o.detected_s);
    record.singles_i += u64::from(o.detected_i);
    if !(o.detected_s && o.detected_i) {
        return;
    }
    record.coincidences += 1;
    let (s, i) = (o.signal, o.idler);
    let c = &mut record.causes;
    c.pair_pair += u64::from(s.pair && i.pair);
    c.pair_fluor += u64::from(s.pair && i.fluorescence);
    c.fluor_pair += u64::from(s.fluorescence && i.pair);
    c.fluor_fluor += u64::from(s.fluorescence && i.fluorescence);
    c.dark_signal_cross += u64::from(s.dark && (i.pair || i.fluorescence));
    c.dark_idler_cross += u64::from(i.dark && (s.pair || s.fluorescence));
    c.dark_dark += u64::from(s.dark && i.dark);
}

/// Simulator bound to one validated configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: SourceParams,
    shards: usize,
}

impl Simulator {
    pub fn new(params: SourceParams) -> Result<Self> {
        Ok(Simulator {
            params: params.validate()?,
            shards: 1,
        })
    }

    /// Number of worker threads; results are identical for any value.
    pub fn with_shards(mut self, shards: usize) -> Self {
        self.shards = shards.max(1);
        self
    }

    pub fn params(&self) -> &SourceParams {
        &self.params
    }

    pub fn shards(&self) -> usize {
        self.shards
    }

    pub fn click_model(&self, projector: ProductProjector) -> ClickModel {
        ClickModel::new(&self.params, projector)
    }

    pub fn run(&self, analyzers: &AnalyzerPair, n_pulses: u64, seed: u64) -> Result<CountRecord> {
        self.run_projector(ProductProjector::from(*analyzers), n_pulses, seed)
    }

    pub fn run_projector(&self, projector: ProductProjector, n_pulses: u64, seed: u64) -> Result<CountRecord> {
        let blocks = self.run_blocks(projector, n_pulses, seed)?;
        Ok(self.merge(blocks, seed))
    }

    /// Per-block tallies, in block order.
    pub fn run_blocks(&self, projector: ProductProjector, n_pulses: u64, seed: u64) -> Result<Vec<CountRecord>> {
        let sampler = FastSampler::new(&self.click_model(projector))?;
        let hash = self.params.params_hash();
        self.for_blocks(n_pulses, |block, pulses| {
            let mut rec = CountRecord::empty(seed, hash, GENERATOR);
            rec.pulses = pulses;
            if sampler.ln_quiet == 0.0 {
                return rec;
            }
            let mut rng = block_rng(seed, block);
            let mut pos: u64 = 0;
            loop {
                let u = 1.0 - rng.random::<f64>();
                let gap = (u.ln() / sampler.ln_quiet).floor();
                let gap = if gap.is_finite() && gap > 0.0 { gap as u64 } else { 0 };
                pos = pos.saturating_add(gap);
                if pos >= pulses {
                    break;
                }
                tally(&mut rec, &sampler.sample_active(&mut rng));
                pos += 1;
            }
            rec
        })
    }

    /// Reference sampler that walks through every pulse.
    pub fn run_literal(&self, projector: ProductProjector, n_pulses: u64, seed: u64) -> Result<CountRecord> {
        let sampler = LiteralSampler::new(&self.click_model(projector))?;
        let hash = self.params.params_hash();
        let blocks = self.for_blocks(n_pulses, |block, pulses| {
            let mut rec = CountRecord::empty(seed, hash, GENERATOR);
            rec.pulses = pulses;
            let mut rng = block_rng(seed, block);
            for _ in 0..pulses {
                tally(&mut rec, &sampler.sample(&mut rng));
            }
            rec
        })?;
        Ok(self.merge(blocks, seed))
    }

    fn merge(&self, blocks: Vec<CountRecord>, seed: u64) -> CountRecord {
        let mut total = CountRecord::empty(seed, self.params.params_hash(), GENERATOR);
        for b in &blocks {
            total.merge(b);
        }
        total
    }

    fn for_blocks<F>(&self, n_pulses: u64, f: F) -> Result<Vec<CountRecord>>
    where
        F: Fn(u64, u64) -> CountRecord + Sync,
    {
        if n_pulses == 0 {
            return Err(Error::invalid("n_pulses must be at least 1"));
        }
        let n_blocks = n_pulses.div_ceil(BLOCK_PULSES);
        let block_len = |b: u64| (n_pulses - b * BLOCK_PULSES).min(BLOCK_PULSES);
        let shards = (self.shards as u64).min(n_blocks);
        if shards <= 1 {
            return Ok((0..n_blocks).map(|b| f(b, block_len(b))).collect());
        }
        let per_shard = n_blocks.div_ceil(shards);
        let f = &f;
        let parts: Vec<Vec<CountRecord>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..shards)
                .map(|k| {
                    let start = k * per_shard;
                    let end = ((k + 1) * per_shard).min(n_blocks);
                    scope.spawn(move || (start..end).map(|b| f(b, block_len(b))).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("shard panicked")).collect()
        });
        Ok(parts.into_iter().flatten().collect())
    }
}

/// Simulates `n_pulses` pulses behind `analyzers`.
pub fn simulate_run(params: &SourceParams, analyzers: &AnalyzerPair, n_pulses: u64, seed: u64) -> Result<CountRecord> {
    Simulator::new(*params)?.run(analyzers, n_pulses, seed)
}
