//! Balanced epoch sampling: equal share per patient within each category,
//! category counts fixed by configured proportions, uniformly random target
//! starts inside each category's eligible region.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ranges::RangeSet;
use super::{label_from_intervals, Result, SegmentCategory, TargetLabel, WindowError, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryProportions {
    pub fully_seizure: f64,
    pub fully_nonseizure: f64,
    pub mixed: f64,
}

impl Default for CategoryProportions {
    fn default() -> Self {
        CategoryProportions {
            fully_seizure: 1.0 / 3.0,
            fully_nonseizure: 1.0 / 3.0,
            mixed: 1.0 / 3.0,
        }
    }
}

impl CategoryProportions {
    pub fn get(&self, c: SegmentCategory) -> f64 {
        match c {
            SegmentCategory::FullySeizure => self.fully_seizure,
            SegmentCategory::FullyNonseizure => self.fully_nonseizure,
            SegmentCategory::Mixed => self.mixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub segments_per_epoch: usize,
    pub proportions: CategoryProportions,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            segments_per_epoch: 60_000,
            proportions: CategoryProportions::default(),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments_per_epoch == 0 {
            return Err(WindowError::InvalidSampler(
                "segments_per_epoch must be positive".into(),
            ));
        }
        let p = self.proportions;
        let sum = p.fully_seizure + p.fully_nonseizure + p.mixed;
        if [p.fully_seizure, p.fully_nonseizure, p.mixed]
            .iter()
            .any(|&x| !(x >= 0.0))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(WindowError::InvalidSampler(format!(
                "proportions {p:?} must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }

    /// Per-category counts by largest-remainder rounding; ties go to the
    /// earlier category.
    pub fn category_counts(&self) -> [usize; 3] {
        let total = self.segments_per_epoch;
        let exact: Vec<f64> = SegmentCategory::ALL
            .iter()
            .map(|&c| self.proportions.get(c) * total as f64)
            .collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let assigned: usize = counts.iter().sum();
        for &i in order.iter().take(total.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        [counts[0], counts[1], counts[2]]
    }
}

/// Sampling metadata of one training recording; no signal data.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedRecording {
    pub recording_id: String,
    pub patient_id: String,
    pub n_samples: usize,
    pub fs: f64,
    /// Merged seizure intervals in seconds.
    pub seizures: Vec<(f64, f64)>,
    /// Intervals where targets may be placed (all of the recording when `None`).
    pub allowed: Option<Vec<(f64, f64)>>,
}

impl IndexedRecording {
    /// Eligible target-start sample indices of each category.
    pub fn eligible_starts(&self, spec: &WindowSpec) -> [RangeSet; 3] {
        let t = spec.target_samples() as i64;
        let n = self.n_samples as i64;
        let fs = self.fs;
        let everything = RangeSet::new([(0, n - t)]);
        let allowed = match &self.allowed {
            None => everything.clone(),
            Some(intervals) => everything.intersect(&RangeSet::new(
                intervals
                    .iter()
                    .map(|&(a, b)| ((a * fs).ceil() as i64, (b * fs).floor() as i64 - t)),
            )),
        };
        let fully = RangeSet::new(
            self.seizures
                .iter()
                .map(|&(a, b)| ((a * fs).ceil() as i64, (b * fs).floor() as i64 - t)),
        );
        let touching = RangeSet::new(
            self.seizures
                .iter()
                .map(|&(a, b)| ((a * fs).floor() as i64 - t + 1, (b * fs).ceil() as i64 - 1)),
        );
        let fully = fully.intersect(&allowed);
        let nonseizure = allowed.subtract(&touching);
        let mixed = allowed.intersect(&touching).subtract(&fully);
        [fully, nonseizure, mixed]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainIndex {
    pub recordings: Vec<IndexedRecording>,
}

/// Where an emitted training segment comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentSource {
    /// Position in [`TrainIndex::recordings`].
    pub recording: usize,
    /// Target start in samples.
    pub start_sample: usize,
    pub category: SegmentCategory,
    pub label: TargetLabel,
}

/// Splits `count` into `n` shares differing by at most one; the extra units
/// go to a random subset.
fn even_split(count: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut shares = vec![count / n; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &i in order.iter().take(count % n) {
        shares[i] += 1;
    }
    shares
}

/// Draws one epoch of segment sources. Fully determined by `cfg.seed` and
/// `epoch_seed`.
pub fn sample_epoch(
    index: &TrainIndex,
    cfg: &SamplerConfig,
    spec: &WindowSpec,
    epoch_seed: u64,
) -> Result<Vec<SegmentSource>> {
    cfg.validate()?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, epoch_seed));

    // patient -> per-category list of (recording, eligible starts)
    let mut by_patient: BTreeMap<&str, [Vec<(usize, RangeSet)>; 3]> = BTreeMap::new();
    for (r, rec) in index.recordings.iter().enumerate() {
        let eligible = rec.eligible_starts(spec);
        let entry = by_patient.entry(rec.patient_id.as_str()).or_default();
        for (slot, set) in entry.iter_mut().zip(eligible) {
            if !set.is_empty() {
                slot.push((r, set));
            }
        }
    }

    let counts = cfg.category_counts();
    let mut out = Vec::with_capacity(cfg.segments_per_epoch);
    for (ci, &category) in SegmentCategory::ALL.iter().enumerate() {
        if counts[ci] == 0 {
            continue;
        }
        let patients: Vec<&[(usize, RangeSet)]> = by_patient
            .values()
            .map(|cats| cats[ci].as_slice())
            .filter(|s| !s.is_empty())
            .collect();
        if patients.is_empty() {
            return Err(WindowError::EmptyCategory(category));
        }
        let shares = even_split(counts[ci], patients.len(), &mut rng);
        for (sources, share) in patients.iter().zip(shares) {
            let total: u64 = sources.iter().map(|(_, s)| s.len()).sum();
            for _ in 0..share {
                let mut k = rng.random_range(0..total);
                for (r, set) in sources.iter() {
                    if k < set.len() {
                        let start = set.nth(k) as usize;
                        let rec = &index.recordings[*r];
                        let (cat, label) = label_from_intervals(
                            &rec.seizures,
                            start as f64 / rec.fs,
                            spec.target_s,
                        );
                        debug_assert_eq!(
                            cat, category,
                            "eligible-region arithmetic disagrees with label_target"
                        );
                        out.push(SegmentSource {
                            recording: *r,
                            start_sample: start,
                            category: cat,
                            label,
                        });
                        break;
                    }
                    k -= set.len();
                }
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}
