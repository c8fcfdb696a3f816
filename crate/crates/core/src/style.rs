//! Histogram-matching style transfer between scanner vendors.
//!
//! A reference distribution is pooled from one random z-slice of each of `n`
//! randomly drawn volumes. A volume is matched to it through a monotone
//! map: its own empirical CDF `S` gives each intensity a cumulative
//! probability (mid-rank for ties), and the reference quantile function
//! `T⁻¹` turns that probability back into an intensity.
//!
//! Reference quantiles interpolate linearly between order statistics placed
//! at plotting positions `(k + 1/2) / M`, the same mid-rank convention as `S`,
//! so matching a volume to its own distribution is close to the identity.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::ScalarVolume;

pub const SOURCE_BINS: usize = 256;
pub const DEFAULT_REFERENCE_VOLUMES: usize = 100;

/// Pooled reference intensities (sorted ascending) and how they were drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceHistogram {
    pub n_volumes: usize,
    pub seed: u64,
    /// `(corpus index, z-slice)` per drawn volume, in draw order.
    pub selections: Vec<(usize, usize)>,
    intensities: Vec<f32>,
}

impl ReferenceHistogram {
    /// Reference built directly from a set of intensities.
    pub fn from_values(mut intensities: Vec<f32>) -> Result<Self> {
        if intensities.is_empty() {
            return Err(Error::Degenerate("reference sample is empty".into()));
        }
        if intensities.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("reference", "non-finite intensity"));
        }
        intensities.sort_by(f32::total_cmp);
        Ok(Self {
            n_volumes: 0,
            seed: 0,
            selections: Vec::new(),
            intensities,
        })
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    /// Empirical CDF `T(x)`: fraction of reference values `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.intensities.partition_point(|&v| (v as f64) <= x);
        k as f64 / self.intensities.len() as f64
    }

    /// Quantile function `T⁻¹(p)`, monotone non-decreasing on `[0, 1]`.
    pub fn quantile(&self, p: f64) -> f64 {
        let m = self.intensities.len();
        let pos = (p.clamp(0.0, 1.0) * m as f64 - 0.5).clamp(0.0, (m - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(m - 1);
        let t = pos - lo as f64;
        let (a, b) = (self.intensities[lo] as f64, self.intensities[hi] as f64);
        if t == 0.0 {
            a
        } else {
            (a + (b - a) * t).min(b)
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

/// Draws `n` volumes without replacement and one uniformly random z-slice
/// from each, pooling the slice voxels.
///
/// Generator: `ChaCha8Rng::seed_from_u64(seed)`; volume indices come from
/// `rand::seq::index::sample(rng, corpus.len(), n)`, then one
/// `gen_range(0..nz)` per drawn volume in draw order.
pub fn build_reference(corpus: &[ScalarVolume], n: usize, seed: u64) -> Result<ReferenceHistogram> {
    if corpus.is_empty() {
        return Err(Error::Degenerate("reference corpus is empty".into()));
    }
    if n == 0 || n > corpus.len() {
        return Err(Error::param(
            "n_volumes",
            format!("{n} must be in 1..={}", corpus.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, corpus.len(), n).into_vec();
    let mut selections = Vec::with_capacity(n);
    let mut pooled = Vec::new();
    for idx in chosen {
        let vol = &corpus[idx];
        let z = rng.gen_range(0..vol.dims()[2]);
        selections.push((idx, z));
        pooled.extend_from_slice(vol.slice_z(z));
    }
    let mut reference = ReferenceHistogram::from_values(pooled)?;
    reference.n_volumes = n;
    reference.seed = seed;
    reference.selections = selections;
    Ok(reference)
}

/// Monotone intensity map `x ↦ T⁻¹(S(x))` for one source volume.
///
/// `S(x)` is the exact empirical mid-rank `(#{v < x} + #{v <= x}) / 2N`, so
/// tied voxels share one output. `source_cdf` is the same function summarized
/// on 256 equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfMapping<'r> {
    /// `SOURCE_BINS + 1` ascending edges over the source range.
    pub bin_edges: Vec<f64>,
    /// Cumulative fraction up to and including each bin; ends at 1.
    pub source_cdf: Vec<f64>,
    pub reference: &'r ReferenceHistogram,
    sorted: Vec<f32>,
}

impl<'r> CdfMapping<'r> {
    /// Requires a non-constant source.
    pub fn new(source: &ScalarVolume, reference: &'r ReferenceHistogram) -> Result<Self> {
        let (lo, hi) = source.min_max();
        if lo == hi {
            return Err(Error::Degenerate("cannot build a CDF over a constant volume".into()));
        }
        let (lo, hi) = (lo as f64, hi as f64);
        let bin_edges: Vec<f64> = (0..=SOURCE_BINS)
            .map(|i| lo + (hi - lo) * i as f64 / SOURCE_BINS as f64)
            .collect();
        let mut counts = vec![0usize; SOURCE_BINS];
        for &v in source.voxels() {
            counts[bin_of(v as f64, lo, hi)] += 1;
        }
        let total = source.voxels().len() as f64;
        let mut running = 0usize;
        let source_cdf: Vec<f64> = counts
            .iter()
            .map(|&c| {
                running += c;
                running as f64 / total
            })
            .collect();
        let mut sorted = source.voxels().to_vec();
        sorted.par_sort_unstable_by(f32::total_cmp);
        Ok(Self {
            bin_edges,
            source_cdf,
            reference,
            sorted,
        })
    }

    pub fn bin(&self, x: f64) -> usize {
        bin_of(x, self.bin_edges[0], self.bin_edges[SOURCE_BINS])
    }

    /// Mid-rank cumulative value `S(x)`.
    pub fn source_rank(&self, x: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| (v as f64) < x);
        let upto = self.sorted.partition_point(|&v| (v as f64) <= x);
        (below + upto) as f64 / (2 * self.sorted.len()) as f64
    }

    pub fn apply(&self, x: f64) -> f32 {
        self.reference.quantile(self.source_rank(x)) as f32
    }
}

#[inline]
fn bin_of(x: f64, lo: f64, hi: f64) -> usize {
    let t = (x - lo) / (hi - lo) * SOURCE_BINS as f64;
    if t.is_nan() || t < 0.0 {
        0
    } else {
        (t as usize).min(SOURCE_BINS - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub volume: ScalarVolume,
    /// Set when the input was constant and was filled with the reference median.
    pub degenerate: bool,
}

pub fn histogram_match(vol: &ScalarVolume, reference: &ReferenceHistogram) -> Result<MatchOutcome> {
    if reference.is_empty() {
        return Err(Error::Degenerate("reference is empty".into()));
    }
    if vol.is_constant() {
        return Ok(MatchOutcome {
            volume: ScalarVolume::filled(*vol.geometry(), reference.median() as f32),
            degenerate: true,
        });
    }
    let mapping = CdfMapping::new(vol, reference)?;
    let voxels = vol.voxels().par_iter().map(|&v| mapping.apply(v as f64)).collect();
    Ok(MatchOutcome {
        volume: ScalarVolume::with_geometry(*vol.geometry(), voxels)?,
        degenerate: false,
    })
}

/// Matches every `from_vendor` volume to a reference drawn from the
/// `to_vendor` volumes. Inputs are left untouched; the result holds only the
/// new, transferred copies in dataset order.
pub fn vendor_transfer(
    dataset: &[(ScalarVolume, String)],
    from_vendor: &str,
    to_vendor: &str,
    n_ref_volumes: usize,
    seed: u64,
) -> Result<Vec<ScalarVolume>> {
    let subset = |tag: &str| -> Vec<&ScalarVolume> {
        dataset.iter().filter(|(_, v)| v == tag).map(|(vol, _)| vol).collect()
    };
    let sources = subset(from_vendor);
    if sources.is_empty() {
        return Err(Error::MissingVendor(from_vendor.to_string()));
    }
    let targets: Vec<ScalarVolume> = subset(to_vendor).into_iter().cloned().collect();
    if targets.is_empty() {
        return Err(Error::MissingVendor(to_vendor.to_string()));
    }
    let reference = build_reference(&targets, n_ref_volumes.min(targets.len()), seed)?;
    sources
        .par_iter()
        .map(|v| histogram_match(v, &reference).map(|m| m.volume))
        .collect()
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f32], b: &[f32]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f32::total_cmp);
    b.sort_by(f32::total_cmp);
    ks_sorted(&a, &b)
}

pub(crate) fn ks_sorted(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        worst = worst.max((i as f64 / na - j as f64 / nb).abs());
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupHistogram {
    pub tag: String,
    pub voxel_count: usize,
    /// Fraction of the group's voxels per bin; sums to 1.
    pub densities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDistance {
    pub a: String,
    pub b: String,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub bins: usize,
    pub range: [f64; 2],
    pub groups: Vec<GroupHistogram>,
    pub pairwise: Vec<PairwiseDistance>,
}

impl HistogramReport {
    /// Tab-separated rows `tag bin lower upper density`, one per bin per tag.
    pub fn to_rows(&self) -> String {
        let [lo, hi] = self.range;
        let width = (hi - lo) / self.bins as f64;
        let mut out = String::from("tag\tbin\tlower\tupper\tdensity\n");
        for g in &self.groups {
            for (b, d) in g.densities.iter().enumerate() {
                let lower = lo + width * b as f64;
                out.push_str(&format!("{}\t{b}\t{lower}\t{}\t{d}\n", g.tag, lower + width));
            }
        }
        out
    }
}

/// Normalized per-tag histograms over the global intensity range plus the
/// KS statistic between every pair of tags.
pub fn histogram_report(groups: &BTreeMap<String, Vec<ScalarVolume>>, bins: usize) -> Result<HistogramReport> {
    if bins < 2 {
        return Err(Error::param("bins", format!("{bins} must be >= 2")));
    }
    if groups.is_empty() {
        return Err(Error::param("groups", "no groups given"));
    }
    let mut pooled: Vec<(String, Vec<f32>)> = Vec::with_capacity(groups.len());
    for (tag, vols) in groups {
        let values: Vec<f32> = vols.iter().flat_map(|v| v.voxels().iter().copied()).collect();
        if values.is_empty() {
            return Err(Error::Degenerate(format!("group `{tag}` has no volumes")));
        }
        pooled.push((tag.clone(), values));
    }
    let (lo, hi) = pooled
        .iter()
        .flat_map(|(_, v)| v.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));

    let bin = |v: f64| -> usize {
        if hi == lo {
            0
        } else {
            (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
        }
    };
    let histograms = pooled
        .iter()
        .map(|(tag, values)| {
            let mut counts = vec![0usize; bins];
            for &v in values {
                counts[bin(v as f64)] += 1;
            }
            GroupHistogram {
                tag: tag.clone(),
                voxel_count: values.len(),
                densities: counts.iter().map(|&c| c as f64 / values.len() as f64).collect(),
            }
        })
        .collect();

    let sorted: Vec<(String, Vec<f32>)> = pooled
        .into_iter()
        .map(|(t, mut v)| {
            v.sort_by(f32::total_cmp);
            (t, v)
        })
        .collect();
    let mut pairwise = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            pairwise.push(PairwiseDistance {
                a: sorted[i].0.clone(),
                b: sorted[j].0.clone(),
                ks: ks_sorted(&sorted[i].1, &sorted[j].1),
            });
        }
    }
    Ok(HistogramReport {
        bins,
        range: [lo, hi],
        groups: histograms,
        pairwise,
    })
}
