//! Histogram representations of a photon stream: oracle, hierarchical and
//! proportional equi-depth boundary sets, and equal-width photon counts.

use std::io::{self, Write};

use crate::binner::{BinnerState, StepParams, Stepping};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, BOUNDS_MAGIC, HIST_MAGIC};
use crate::transient::PhotonStream;

/// Sorted equi-depth bin boundaries `t_0 = 0 <= t_1 <= ... <= t_q = bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdhBoundaries {
    bounds: Vec<f64>,
}

impl EdhBoundaries {
    /// Builds a boundary set from `q - 1` interior positions, sorting them and
    /// adding the fixed endpoints.
    pub fn from_interior(mut interior: Vec<f64>, bins: f64) -> Result<Self> {
        if let Some(t) = interior.iter().find(|t| !(**t >= 0.0 && **t <= bins)) {
            return Err(Error::OutOfRange { position: *t, bins });
        }
        interior.sort_unstable_by(f64::total_cmp);
        let mut bounds = Vec::with_capacity(interior.len() + 2);
        bounds.push(0.0);
        bounds.extend(interior);
        bounds.push(bins);
        Ok(EdhBoundaries { bounds })
    }

    /// Validates a complete boundary vector.
    pub fn new(bounds: Vec<f64>) -> Result<Self> {
        if bounds.len() < 2 {
            return Err(Error::InvalidParams("need at least two boundaries".into()));
        }
        if bounds[0] != 0.0 {
            return Err(Error::InvalidParams(format!("t_0 = {} != 0", bounds[0])));
        }
        if bounds.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidParams("boundaries not sorted".into()));
        }
        Ok(EdhBoundaries { bounds })
    }

    /// Evenly spaced boundaries, `t_j = j * bins / q`.
    pub fn uniform(q: usize, bins: f64) -> Self {
        EdhBoundaries {
            bounds: (0..=q).map(|j| j as f64 * bins / q as f64).collect(),
        }
    }

    pub fn q(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn bins(&self) -> f64 {
        *self.bounds.last().unwrap()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.bounds
    }

    pub fn interior(&self) -> &[f64] {
        &self.bounds[1..self.bounds.len() - 1]
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.bounds.windows(2).map(|w| w[1] - w[0])
    }
}

/// Equal-width photon-count histogram over `[0, range)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EwHistogram {
    counts: Vec<u64>,
    range: usize,
}

impl EwHistogram {
    pub fn from_counts(counts: Vec<u64>, range: usize) -> Self {
        EwHistogram { counts, range }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    /// Width of the time axis in fine bins.
    pub fn range(&self) -> usize {
        self.range
    }

    pub fn bin_width(&self) -> f64 {
        self.range as f64 / self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Oracle equi-depth boundaries: the pooled empirical `j / q` quantiles.
///
/// `t_j` is the smallest pooled timestamp whose empirical CDF reaches `j/q`,
/// i.e. the order statistic of rank `ceil(j * N / q)`.
pub fn oedh(stream: &PhotonStream, q: usize) -> Result<EdhBoundaries> {
    let mut pooled = stream.pooled().to_vec();
    pooled.sort_unstable_by(f64::total_cmp);
    oedh_sorted(&pooled, q, stream.bins() as f64)
}

/// [`oedh`] over an already sorted pooled sample.
pub fn oedh_sorted(sorted: &[f64], q: usize, bins: f64) -> Result<EdhBoundaries> {
    if q < 1 {
        return Err(Error::InvalidParams("q must be at least 1".into()));
    }
    let n = sorted.len();
    if n < q {
        return Err(Error::TooFewPhotons { photons: n, q });
    }
    let interior = (1..q)
        .map(|j| {
            let rank = (j * n).div_ceil(q);
            sorted[rank - 1]
        })
        .collect();
    EdhBoundaries::from_interior(interior, bins)
}

/// Streaming proportional equi-depth histogrammer: `q - 1` optimized
/// binners with targets `j / q`, all consuming every cycle. Memory does not
/// grow with the number of cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct PedhState {
    binners: Vec<BinnerState>,
    bins: usize,
}

impl PedhState {
    pub fn new(q: usize, bins: usize, params: &StepParams) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidParams(format!("pedh needs q >= 2, got {q}")));
        }
        params.validate()?;
        let stepping = Stepping::Optimized(*params);
        let binners = (1..q)
            .map(|j| BinnerState::new(j as f64 / q as f64, bins, stepping))
            .collect();
        Ok(PedhState { binners, bins })
    }

    pub fn update(&mut self, cycle: &[f64]) {
        for b in &mut self.binners {
            b.update(cycle);
        }
    }

    pub fn binners(&self) -> &[BinnerState] {
        &self.binners
    }

    /// Bytes of binner state held.
    pub fn state_bytes(&self) -> usize {
        self.binners.len() * std::mem::size_of::<BinnerState>()
    }

    /// Current boundaries; the final CVs sorted.
    pub fn boundaries(&self) -> Result<EdhBoundaries> {
        EdhBoundaries::from_interior(
            self.binners.iter().map(|b| b.cv).collect(),
            self.bins as f64,
        )
    }
}

/// Runs [`PedhState`] over a whole stream.
pub fn pedh(stream: &PhotonStream, q: usize, params: &StepParams) -> Result<EdhBoundaries> {
    let mut state = PedhState::new(q, stream.bins(), params)?;
    for cycle in stream.cycles() {
        state.update(cycle);
    }
    state.boundaries()
}

/// Hierarchical equi-depth histogrammer built from fixed-step median binners.
///
/// The exposure is split evenly over `log2(q)` levels (the last level takes
/// the remainder). Level 1 tracks the median of the whole period; each binner
/// of level `l` tracks the median of one sub-interval delimited by the
/// boundaries of levels `1..l`, starting from its midpoint and ignoring
/// photons outside it.
pub fn hedh(stream: &PhotonStream, q: usize, fixed_step: f64) -> Result<EdhBoundaries> {
    if q < 2 || !q.is_power_of_two() {
        return Err(Error::QNotPowerOfTwo(q));
    }
    if !(fixed_step > 0.0) {
        return Err(Error::InvalidParams(format!(
            "fixed step {fixed_step} <= 0"
        )));
    }
    let bins = stream.bins();
    let levels = q.trailing_zeros() as usize;
    let cycles = stream.num_cycles();
    let share = cycles / levels;
    let stepping = Stepping::Fixed { step: fixed_step };
    let mut edges = vec![0.0, bins as f64];
    for level in 0..levels {
        let start = level * share;
        let end = if level + 1 == levels {
            cycles
        } else {
            start + share
        };
        let mut binners: Vec<BinnerState> = edges
            .windows(2)
            .map(|w| BinnerState::confined(0.5, bins, w[0], w[1], 0.5 * (w[0] + w[1]), stepping))
            .collect();
        for i in start..end {
            let cycle = stream.cycle(i);
            for b in &mut binners {
                b.update(cycle);
            }
        }
        let mut next = Vec::with_capacity(2 * edges.len() - 1);
        for (w, b) in edges.windows(2).zip(&binners) {
            next.push(w[0]);
            next.push(b.cv);
        }
        next.push(bins as f64);
        edges = next;
    }
    EdhBoundaries::new(edges)
}

/// Counts pooled photons in `bin_count` equal-width bins over `[0, bins)`.
pub fn ewh(stream: &PhotonStream, bin_count: usize) -> Result<EwHistogram> {
    let bins = stream.bins();
    if bin_count == 0 || bin_count > bins {
        return Err(Error::InvalidBinCount { bin_count, bins });
    }
    let mut counts = vec![0u64; bin_count];
    let scale = bin_count as f64 / bins as f64;
    for &t in stream.pooled() {
        let i = ((t * scale) as usize).min(bin_count - 1);
        counts[i] += 1;
    }
    Ok(EwHistogram::from_counts(counts, bins))
}

/// One boundary set per line, comma separated.
pub fn write_bounds_csv<W: Write>(mut w: W, rows: &[EdhBoundaries]) -> io::Result<()> {
    for b in rows {
        let line: Vec<String> = b.as_slice().iter().map(|t| t.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_bounds_csv(text: &str) -> Result<Vec<EdhBoundaries>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let v = l
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| {
                        Error::parse(format!("line {}", i + 1), format!("bad value {f:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            EdhBoundaries::new(v)
        })
        .collect()
}

/// One histogram per line, comma separated counts.
pub fn write_hist_csv<W: Write>(mut w: W, rows: &[EwHistogram]) -> io::Result<()> {
    for h in rows {
        let line: Vec<String> = h.counts().iter().map(|c| c.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Reads [`write_hist_csv`] output; `range` is the number of time bins the
/// histograms cover.
pub fn read_hist_csv(text: &str, range: usize) -> Result<Vec<EwHistogram>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let counts = l
                .split(',')
                .map(|f| {
                    f.trim().parse::<u64>().map_err(|_| {
                        Error::parse(format!("line {}", i + 1), format!("bad count {f:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if counts.is_empty() || counts.len() > range {
                return Err(Error::InvalidBinCount {
                    bin_count: counts.len(),
                    bins: range,
                });
            }
            Ok(EwHistogram::from_counts(counts, range))
        })
        .collect()
}

/// Packs per-pixel boundary sets (all with the same `q`) into a tensor.
pub fn bounds_tensor(width: usize, height: usize, rows: &[EdhBoundaries]) -> Result<Tensor> {
    let channels = rows.first().map_or(0, |b| b.q() + 1);
    if rows.iter().any(|b| b.q() + 1 != channels) {
        return Err(Error::ShapeMismatch("boundary sets differ in q".into()));
    }
    let data = rows
        .iter()
        .flat_map(|b| b.as_slice().iter().map(|&t| t as f32))
        .collect();
    Tensor::new(BOUNDS_MAGIC, width, height, channels, data)
}

pub fn hist_tensor(width: usize, height: usize, rows: &[EwHistogram]) -> Result<Tensor> {
    let channels = rows.first().map_or(0, EwHistogram::bin_count);
    if rows.iter().any(|h| h.bin_count() != channels) {
        return Err(Error::ShapeMismatch(
            "histograms differ in bin count".into(),
        ));
    }
    let data = rows
        .iter()
        .flat_map(|h| h.counts().iter().map(|&c| c as f32))
        .collect();
    Tensor::new(HIST_MAGIC, width, height, channels, data)
}
