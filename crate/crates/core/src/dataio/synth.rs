//! Desk-scale synthetic sessions with controllable class signal and
//! user/segment distribution shift.
//!
//! Every frame of session `(u, s)` that belongs to report `j` is
//!
//! ```text
//! x = class_separation * mu[class_j]
//!   + user_shift * user[u]
//!   + segment_shift * (sqrt(c) * session[u, s] + sqrt(1 - c) * segment[j])
//!   + noise_sd * eps
//! ```
//!
//! with all prototype vectors standard normal and `c = session_coherence`.
//! A frame belongs to the first report whose post-report context it precedes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Dataset, FmsReport, Frame, SessionKey};
use crate::features::FEATURE_DIM;
use crate::preprocess::{BinningThresholds, CsClass};

const SCENARIO_NAMES: [&str; 5] = ["roadside", "seavoyage", "rollercoaster", "beachcity", "furnitureshop"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_scenarios: usize,
    pub reports_per_session: usize,
    /// Seconds between FMS prompts.
    pub report_interval: f64,
    /// Frames per second.
    pub frame_rate: f64,
    pub class_separation: f64,
    pub user_shift: f64,
    pub segment_shift: f64,
    /// Share of segment-offset variance common to the whole session, in [0, 1].
    pub session_coherence: f64,
    pub noise_sd: f64,
    /// Relative frequency of None/Low/Medium/High among reports.
    pub class_weights: [f64; 4],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 8,
            n_scenarios: 5,
            reports_per_session: 14,
            report_interval: 30.0,
            frame_rate: 20.0,
            class_separation: 1.0,
            user_shift: 0.5,
            segment_shift: 0.5,
            session_coherence: 0.5,
            noise_sd: 1.0,
            class_weights: [0.25; 4],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.n_users == 0 || self.n_scenarios == 0 || self.reports_per_session == 0 {
            return fail("counts must be at least 1");
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return fail("frame_rate must be positive");
        }
        if !(self.report_interval > 0.0 && self.report_interval.is_finite()) {
            return fail("report_interval must be positive");
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return fail("noise_sd must be positive");
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("user_shift", self.user_shift),
            ("segment_shift", self.segment_shift),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DataError::InvalidSpec(format!("{name} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.session_coherence) {
            return fail("session_coherence must lie in [0, 1]");
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.class_weights.iter().sum::<f64>() <= 0.0
        {
            return fail("class_weights must be non-negative with a positive sum");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn scenario_name(i: usize) -> String {
        SCENARIO_NAMES
            .get(i)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("scenario{:02}", i + 1))
    }

    pub fn user_name(i: usize) -> String {
        format!("u{:02}", i + 1)
    }
}

/// The FMS score at the midpoint of a class's default bin.
pub(crate) fn midpoint_score(class: CsClass) -> u8 {
    let th = BinningThresholds::default();
    let (lo, hi) = match class {
        CsClass::None => (0, th.none_max),
        CsClass::Low => (th.none_max + 1, th.low_max),
        CsClass::Medium => (th.low_max + 1, th.medium_max),
        CsClass::High => (th.medium_max + 1, 10),
    };
    (lo + hi) / 2
}

/// Per-class report counts by largest remainder; every class with positive
/// weight gets at least one report when there are enough reports.
fn class_quota(weights: &[f64; 4], total: usize) -> [usize; 4] {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts = [0usize; 4];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = total - counts.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[c] += 1;
        left -= 1;
    }
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if total >= positive {
        for c in 0..4 {
            if weights[c] > 0.0 && counts[c] == 0 {
                let donor = (0..4).max_by_key(|&d| (counts[d], usize::MAX - d)).unwrap();
                counts[donor] -= 1;
                counts[c] += 1;
            }
        }
    }
    counts
}

fn normal_vec(rng: &mut ChaCha8Rng) -> [f64; FEATURE_DIM] {
    let mut v = [0.0; FEATURE_DIM];
    for x in v.iter_mut() {
        *x = StandardNormal.sample(rng);
    }
    v
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let class_means: Vec<[f64; FEATURE_DIM]> = (0..4).map(|_| normal_vec(&mut rng)).collect();
    let user_offsets: Vec<[f64; FEATURE_DIM]> = (0..spec.n_users).map(|_| normal_vec(&mut rng)).collect();

    let total = spec.n_users * spec.n_scenarios * spec.reports_per_session;
    let quota = class_quota(&spec.class_weights, total);
    let mut labels: Vec<CsClass> = quota
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(CsClass::from_ordinal(c).unwrap(), n))
        .collect();
    labels.shuffle(&mut rng);

    let coherent = spec.session_coherence.sqrt();
    let local = (1.0 - spec.session_coherence).sqrt();
    let future_s = 1.0;
    let session_len = spec.reports_per_session as f64 * spec.report_interval + future_s + 1.0;
    let n_frames = (session_len * spec.frame_rate).floor() as usize + 1;

    let mut frames = BTreeMap::new();
    let mut reports = BTreeMap::new();
    let mut label_iter = labels.into_iter();
    for u in 0..spec.n_users {
        for s in 0..spec.n_scenarios {
            let key = SessionKey::new(SynthSpec::user_name(u), SynthSpec::scenario_name(s));
            let session_offset = normal_vec(&mut rng);

            let mut report_times = Vec::with_capacity(spec.reports_per_session);
            let mut means = Vec::with_capacity(spec.reports_per_session);
            let mut session_reports = Vec::with_capacity(spec.reports_per_session);
            for j in 0..spec.reports_per_session {
                let class = label_iter.next().expect("quota covers every report");
                let segment_offset = normal_vec(&mut rng);
                let mut mean = [0.0; FEATURE_DIM];
                for f in 0..FEATURE_DIM {
                    mean[f] = spec.class_separation * class_means[class.ordinal()][f]
                        + spec.user_shift * user_offsets[u][f]
                        + spec.segment_shift * (coherent * session_offset[f] + local * segment_offset[f]);
                }
                let t = (j + 1) as f64 * spec.report_interval;
                report_times.push(t);
                means.push(mean);
                session_reports.push(FmsReport {
                    session: key.clone(),
                    t,
                    score: midpoint_score(class),
                });
            }

            let mut stream = Vec::with_capacity(n_frames);
            let mut j = 0;
            for i in 0..n_frames {
                let t = i as f64 / spec.frame_rate;
                while j + 1 < report_times.len() && t >= report_times[j] + future_s {
                    j += 1;
                }
                let mut features = means[j];
                for x in features.iter_mut() {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *x += spec.noise_sd * eps;
                }
                stream.push(Frame { t, features });
            }
            frames.insert(key.clone(), stream);
            reports.insert(key, session_reports);
        }
    }
    Dataset::from_sessions(frames, reports, format!("synthetic:{}", spec.hash()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{write_reports_csv, write_tracking_csv};
    use crate::features::registry;
    use crate::preprocess::bin_fms;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_users: 4,
            n_scenarios: 2,
            reports_per_session: 14,
            seed,
            ..SynthSpec::default()
        }
    }

    fn csv_bytes(d: &Dataset) -> (Vec<u8>, Vec<u8>) {
        let mut t = Vec::new();
        let mut r = Vec::new();
        write_tracking_csv(&mut t, registry(), &d.tracking_frames()).unwrap();
        write_reports_csv(&mut r, &d.all_reports()).unwrap();
        (t, r)
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(&small(7)).unwrap();
        let b = generate_synthetic(&small(7)).unwrap();
        assert_eq!(csv_bytes(&a), csv_bytes(&b));
        let c = generate_synthetic(&small(8)).unwrap();
        assert_ne!(csv_bytes(&a).0, csv_bytes(&c).0);
    }

    #[test]
    fn report_count_and_class_coverage() {
        let d = generate_synthetic(&small(7)).unwrap();
        assert_eq!(d.report_count(), 4 * 2 * 14);
        let mut seen = [0usize; 4];
        for r in d.all_reports() {
            seen[bin_fms(r.score, &BinningThresholds::default()).unwrap().ordinal()] += 1;
        }
        assert!(seen.iter().all(|&n| n > 0), "{seen:?}");
        assert_eq!(seen.iter().sum::<usize>(), 112);
    }

    #[test]
    fn frames_cover_every_report_window() {
        let d = generate_synthetic(&small(1)).unwrap();
        let report = crate::dataio::validate_dataset(&d);
        assert_eq!(report.warning_count(), 0);
    }

    #[test]
    fn midpoint_scores_bin_back_to_their_class() {
        for c in CsClass::ALL {
            assert_eq!(bin_fms(midpoint_score(c), &BinningThresholds::default()).unwrap(), c);
        }
    }

    #[test]
    fn quota_guarantees_every_class() {
        assert_eq!(class_quota(&[0.25; 4], 4), [1, 1, 1, 1]);
        assert_eq!(
            class_quota(&[0.97, 0.01, 0.01, 0.01], 10)
                .iter()
                .filter(|&&n| n > 0)
                .count(),
            4
        );
        assert_eq!(class_quota(&[1.0, 0.0, 1.0, 0.0], 5).iter().sum::<usize>(), 5);
    }

    #[test]
    fn invalid_spec_rejected() {
        let bad = SynthSpec {
            n_users: 0,
            ..SynthSpec::default()
        };
        assert!(matches!(generate_synthetic(&bad), Err(DataError::InvalidSpec(_))));
        let bad = SynthSpec {
            noise_sd: 0.0,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn zero_separation_means_equal_class_means() {
        // with no class signal and no shifts, class-conditional frame means
        // agree up to sampling noise
        let spec = SynthSpec {
            n_users: 2,
            n_scenarios: 2,
            reports_per_session: 8,
            class_separation: 0.0,
            user_shift: 0.0,
            segment_shift: 0.0,
            seed: 3,
            ..SynthSpec::default()
        };
        let d = generate_synthetic(&spec).unwrap();
        let th = BinningThresholds::default();
        let mut sums = [[0.0; FEATURE_DIM]; 4];
        let mut counts = [0usize; 4];
        for key in d.sessions() {
            let reps = d.reports(key);
            for f in d.frames(key) {
                let j = reps.iter().position(|r| f.t < r.t + 1.0).unwrap_or(reps.len() - 1);
                let c = bin_fms(reps[j].score, &th).unwrap().ordinal();
                counts[c] += 1;
                for (s, x) in sums[c].iter_mut().zip(&f.features) {
                    *s += x;
                }
            }
        }
        for c in 0..4 {
            for f in 0..FEATURE_DIM {
                let m = sums[c][f] / counts[c] as f64;
                // thousands of unit-variance frames per class
                assert!(m.abs() < 0.1, "class {c} feature {f} mean {m}");
            }
        }
    }
}
