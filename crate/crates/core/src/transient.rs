//! Transient image formation and Poisson photon-timestamp sampling.
//!
//! A pixel's transient distribution is a Gaussian laser return on top of a
//! flat background, discretized into `bins` intervals of width `period / bins`.
//! Photon timestamps are continuous bin positions in `[0, bins)`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::scene::PixelConfig;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Global sensor constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Number of discrete time bins per laser period.
    pub bins: usize,
    /// Laser repetition period in seconds.
    pub period: f64,
    /// Pulse full width at half maximum in seconds.
    pub fwhm: f64,
    /// Laser cycles per exposure.
    pub cycles: usize,
    /// Speed of light in m/s.
    pub c: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            bins: 1024,
            period: 100e-9,
            fwhm: 0.32e-9,
            cycles: 5000,
            c: SPEED_OF_LIGHT,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidConfig(format!("bins = {} < 2", self.bins)));
        }
        if !(self.period > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "period = {} <= 0",
                self.period
            )));
        }
        if !(self.fwhm > 0.0 && self.fwhm < self.period) {
            return Err(Error::InvalidConfig(format!(
                "fwhm = {} not in (0, period)",
                self.fwhm
            )));
        }
        if self.cycles < 1 {
            return Err(Error::InvalidConfig("cycles must be at least 1".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidConfig(format!("c = {} <= 0", self.c)));
        }
        Ok(())
    }

    /// Width of one time bin in seconds.
    pub fn bin_width(&self) -> f64 {
        self.period / self.bins as f64
    }

    /// Maximum unambiguous distance, `c * period / 2`.
    pub fn z_max(&self) -> f64 {
        self.c * self.period / 2.0
    }

    pub fn bins_f64(&self) -> f64 {
        self.bins as f64
    }

    /// Gaussian standard deviation of the pulse, in bins.
    pub fn sigma_bins(&self) -> f64 {
        self.fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()) / self.bin_width()
    }

    /// Round-trip time of flight for distance `z`, in bins.
    pub fn distance_to_bin(&self, z: f64) -> f64 {
        2.0 * z / self.c / self.bin_width()
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mean photon count per bin per laser cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Transient {
    values: Vec<f64>,
    config: SimConfig,
}

impl Transient {
    /// Integrates a unit-mass Gaussian pulse over each bin, scales it by the
    /// per-cycle signal total and adds the background spread evenly over all
    /// bins. Pulse mass outside `[0, period)` is dropped.
    pub fn build(pixel: &PixelConfig, cfg: &SimConfig) -> Result<Transient> {
        cfg.validate()?;
        pixel.validate()?;
        let round_trip = 2.0 * pixel.z / cfg.c;
        if round_trip >= cfg.period {
            return Err(Error::DistanceExceedsRange {
                distance: pixel.z,
                limit: cfg.z_max(),
            });
        }
        let center = round_trip / cfg.bin_width();
        let sigma = cfg.sigma_bins();
        let bkg = pixel.phi_bkg_total / cfg.bins as f64;
        let values = (0..cfg.bins)
            .map(|k| {
                let lo = normal_cdf((k as f64 - center) / sigma);
                let hi = normal_cdf((k as f64 + 1.0 - center) / sigma);
                pixel.phi_sig_total * (hi - lo) + bkg
            })
            .collect();
        Ok(Transient {
            values,
            config: *cfg,
        })
    }

    /// Wraps precomputed per-bin means. All values must be finite and non-negative.
    pub fn from_values(values: Vec<f64>, config: SimConfig) -> Result<Transient> {
        if values.len() != config.bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} bins",
                values.len(),
                config.bins
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParams(format!("transient value {v}")));
        }
        Ok(Transient { values, config })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Mean photons per cycle.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Position `t` where the continuous CDF of the transient (uniform within
    /// each bin) reaches `p`. Returns `None` for an all-zero transient.
    pub fn quantile(&self, p: f64) -> Option<f64> {
        let total = self.total();
        if !(total > 0.0) {
            return None;
        }
        let target = p.clamp(0.0, 1.0) * total;
        let mut acc = 0.0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > 0.0 && acc + v >= target {
                return Some(k as f64 + ((target - acc) / v).clamp(0.0, 1.0));
            }
            acc += v;
        }
        Some(self.values.len() as f64)
    }
}

/// Signal-to-background ratio of a pixel, `phi_sig_total / phi_bkg_total`.
pub fn sbr(pixel: &PixelConfig) -> Result<f64> {
    if pixel.phi_bkg_total == 0.0 {
        return Err(Error::ZeroBackground);
    }
    Ok(pixel.phi_sig_total / pixel.phi_bkg_total)
}

/// Draws laser cycles from a transient.
///
/// Each cycle is a Poisson process over the bins: the photon count is
/// `Poisson(total)` and each photon lands in bin `k` with probability
/// `values[k] / total`, which is the same law as independent per-bin
/// `Poisson(values[k])` counts. Every photon gets a uniform sub-bin offset.
pub struct PhotonSampler<'a> {
    transient: &'a Transient,
    cumulative: Vec<f64>,
    count: Option<Poisson<f64>>,
}

impl<'a> PhotonSampler<'a> {
    pub fn new(transient: &'a Transient) -> Self {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = transient
            .values
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        let count = if acc > 0.0 {
            Poisson::new(acc).ok()
        } else {
            None
        };
        PhotonSampler {
            transient,
            cumulative,
            count,
        }
    }

    /// Appends one cycle's sorted timestamps to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        let Some(count) = &self.count else {
            return;
        };
        let n = count.sample(rng) as usize;
        let total = *self.cumulative.last().unwrap();
        let last = self.transient.values.len() - 1;
        let start = out.len();
        for _ in 0..n {
            let u = rng.gen::<f64>() * total;
            let k = self.cumulative.partition_point(|&c| c <= u).min(last);
            out.push(k as f64 + rng.gen::<f64>());
        }
        out[start..].sort_unstable_by(f64::total_cmp);
    }

    pub fn sample_cycle<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::new();
        self.sample_into(rng, &mut out);
        out
    }
}

/// One cycle of sorted photon timestamps drawn from `transient`.
pub fn sample_cycle<R: Rng + ?Sized>(transient: &Transient, rng: &mut R) -> Vec<f64> {
    PhotonSampler::new(transient).sample_cycle(rng)
}

/// Photon timestamps for an exposure of `cycles` laser cycles.
///
/// Stored flat: `offsets[i]..offsets[i + 1]` indexes cycle `i` in `timestamps`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonStream {
    timestamps: Vec<f64>,
    offsets: Vec<usize>,
    bins: usize,
    seed: u64,
}

impl PhotonStream {
    /// Builds a stream from explicit per-cycle timestamp lists (sorted on entry).
    pub fn from_cycles(cycles: Vec<Vec<f64>>, bins: usize, seed: u64) -> Result<PhotonStream> {
        let mut timestamps = Vec::new();
        let mut offsets = Vec::with_capacity(cycles.len() + 1);
        offsets.push(0);
        for mut cycle in cycles {
            if let Some(t) = cycle.iter().find(|t| !(**t >= 0.0 && **t < bins as f64)) {
                return Err(Error::OutOfRange {
                    position: *t,
                    bins: bins as f64,
                });
            }
            cycle.sort_unstable_by(f64::total_cmp);
            timestamps.extend(cycle);
            offsets.push(timestamps.len());
        }
        Ok(PhotonStream {
            timestamps,
            offsets,
            bins,
            seed,
        })
    }

    pub fn num_cycles(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn cycle(&self, i: usize) -> &[f64] {
        &self.timestamps[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn cycles(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.offsets
            .windows(2)
            .map(|w| &self.timestamps[w[0]..w[1]])
    }

    /// Every timestamp in cycle order.
    pub fn pooled(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn total_photons(&self) -> usize {
        self.timestamps.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Cycles `range` as a new stream (used to split an exposure).
    pub fn slice(&self, range: std::ops::Range<usize>) -> PhotonStream {
        let base = self.offsets[range.start];
        let end = self.offsets[range.end];
        PhotonStream {
            timestamps: self.timestamps[base..end].to_vec(),
            offsets: self.offsets[range.start..=range.end]
                .iter()
                .map(|o| o - base)
                .collect(),
            bins: self.bins,
            seed: self.seed,
        }
    }

    /// FNV-1a over the cycle layout and timestamp bit patterns.
    pub fn checksum(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for &o in &self.offsets {
            mix(o as u64);
        }
        for t in &self.timestamps {
            mix(t.to_bits());
        }
        h
    }

    /// Debug dump, one `cycle_index,timestamp` line per photon.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cycle_index,timestamp")?;
        for (i, cycle) in self.cycles().enumerate() {
            for t in cycle {
                writeln!(w, "{i},{t}")?;
            }
        }
        Ok(())
    }
}

/// Samples `cycles` independent laser cycles with a generator seeded by `seed`.
pub fn sample_stream(transient: &Transient, cycles: usize, seed: u64) -> Result<PhotonStream> {
    if cycles < 1 {
        return Err(Error::InvalidConfig("cycles must be at least 1".into()));
    }
    let sampler = PhotonSampler::new(transient);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expected = (transient.total() * cycles as f64 * 1.1) as usize + 16;
    let mut timestamps = Vec::with_capacity(expected);
    let mut offsets = Vec::with_capacity(cycles + 1);
    offsets.push(0);
    for _ in 0..cycles {
        sampler.sample_into(&mut rng, &mut timestamps);
        offsets.push(timestamps.len());
    }
    Ok(PhotonStream {
        timestamps,
        offsets,
        bins: transient.values.len(),
        seed,
    })
}

/// Derives an independent generator seed from a parent seed and an index
/// (splitmix64 finalizer over the combined words).
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    let mut z = parent
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index)
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel(z: f64, sig: f64, bkg: f64) -> PixelConfig {
        PixelConfig::new(z, sig, bkg).unwrap()
    }

    #[test]
    fn peak_at_round_trip_bin() {
        let cfg = SimConfig::default();
        let tr = Transient::build(&pixel(7.5, 1.0, 0.0), &cfg).unwrap();
        // 2 * 7.5 / 2.998e8 / 97.65625e-12 = 512.34
        let center = cfg.distance_to_bin(7.5);
        assert!((center - 512.34).abs() < 0.01, "{center}");
        let argmax = tr
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(argmax == 512 || argmax == 513);
    }

    #[test]
    fn pure_background_is_flat() {
        let tr = Transient::build(&pixel(7.5, 0.0, 1.0), &SimConfig::default()).unwrap();
        assert!(tr.values().iter().all(|&v| v == 1.0 / 1024.0));
    }

    #[test]
    fn sigma_and_neighbor_ratio() {
        let cfg = SimConfig::default();
        let sigma = cfg.sigma_bins();
        assert!((sigma - 1.3910).abs() < 1e-3, "{sigma}");
        // Pulse centered mid-bin: bins integrate to approximately the density
        // at their centers, so neighbor ratio ~ exp(-1 / (2 sigma^2)).
        let z = 512.5 * cfg.bin_width() * cfg.c / 2.0;
        let tr = Transient::build(&pixel(z, 1.0, 0.0), &cfg).unwrap();
        let v = tr.values();
        let ratio = v[513] / v[512];
        let expected = (-1.0 / (2.0 * sigma * sigma)).exp();
        assert!((ratio - expected).abs() < 0.03, "{ratio} vs {expected}");
        assert!((v[511] / v[512] - expected).abs() < 0.03);
    }

    #[test]
    fn signal_mass_is_preserved_away_from_edges() {
        let cfg = SimConfig::default();
        let tr = Transient::build(&pixel(7.5, 1.3, 0.7), &cfg).unwrap();
        assert!((tr.total() - 2.0).abs() < 1e-9 * 2.0);
    }

    #[test]
    fn truncated_pulse_loses_mass() {
        let cfg = SimConfig::default();
        let z = 0.5 * cfg.bin_width() * cfg.c / 2.0;
        let tr = Transient::build(&pixel(z, 1.0, 0.0), &cfg).unwrap();
        assert!(tr.total() < 1.0 && tr.total() > 0.5);
    }

    #[test]
    fn distance_beyond_range_rejected() {
        let cfg = SimConfig::default();
        let err = Transient::build(&pixel(cfg.z_max(), 1.0, 1.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::DistanceExceedsRange { .. }));
    }

    #[test]
    fn sbr_values() {
        assert_eq!(sbr(&pixel(1.0, 1.0, 1.0)).unwrap(), 1.0);
        assert!((sbr(&pixel(1.0, 1.0, 10.0)).unwrap() - 0.1).abs() < 1e-15);
        assert!((sbr(&pixel(1.0, 0.5, 2.5)).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(
            sbr(&pixel(1.0, 1.0, 0.0)),
            Err(Error::ZeroBackground)
        ));
    }

    #[test]
    fn zero_transient_gives_empty_cycles() {
        let cfg = SimConfig::default();
        let tr = Transient::from_values(vec![0.0; cfg.bins], cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(sample_cycle(&tr, &mut rng).is_empty());
        }
        assert_eq!(sample_stream(&tr, 10, 3).unwrap().total_photons(), 0);
    }

    #[test]
    fn background_only_photon_rate() {
        let tr = Transient::build(&pixel(7.5, 0.0, 1.0), &SimConfig::default()).unwrap();
        let stream = sample_stream(&tr, 10_000, 11).unwrap();
        let mean = stream.total_photons() as f64 / 10_000.0;
        assert!(
            (mean - 1.0).abs() <= 3.0 * (1.0f64 / 10_000.0).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn total_photons_for_unit_levels() {
        let tr = Transient::build(&pixel(7.5, 1.0, 1.0), &SimConfig::default()).unwrap();
        let stream = sample_stream(&tr, 5000, 5).unwrap();
        let n = stream.total_photons() as f64;
        assert!(
            (n - 10_000.0).abs() <= 3.0 * (2.0f64 * 5000.0).sqrt(),
            "{n}"
        );
    }

    #[test]
    fn streams_are_seed_deterministic_and_sorted() {
        let tr = Transient::build(&pixel(3.0, 1.0, 2.0), &SimConfig::default()).unwrap();
        let a = sample_stream(&tr, 500, 42).unwrap();
        let b = sample_stream(&tr, 500, 42).unwrap();
        let c = sample_stream(&tr, 500, 43).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
        for cycle in a.cycles() {
            assert!(cycle.windows(2).all(|w| w[0] <= w[1]));
            assert!(cycle.iter().all(|&t| (0.0..1024.0).contains(&t)));
        }
    }

    #[test]
    fn zero_cycles_rejected() {
        let tr = Transient::build(&pixel(3.0, 1.0, 2.0), &SimConfig::default()).unwrap();
        assert!(sample_stream(&tr, 0, 1).is_err());
        let cfg = SimConfig {
            cycles: 0,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn slice_keeps_cycles() {
        let tr = Transient::build(&pixel(3.0, 1.0, 2.0), &SimConfig::default()).unwrap();
        let s = sample_stream(&tr, 100, 9).unwrap();
        let part = s.slice(40..60);
        assert_eq!(part.num_cycles(), 20);
        for i in 0..20 {
            assert_eq!(part.cycle(i), s.cycle(40 + i));
        }
    }

    #[test]
    fn transient_quantile_of_flat_background() {
        let tr = Transient::build(&pixel(7.5, 0.0, 2.0), &SimConfig::default()).unwrap();
        assert!((tr.quantile(0.25).unwrap() - 256.0).abs() < 1e-9);
        assert!((tr.quantile(0.5).unwrap() - 512.0).abs() < 1e-9);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        let c = derive_seed(8, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(7, 0));
    }
}
