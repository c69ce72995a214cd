use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Wall-clock source for timing; injectable for tests.
pub trait Stopwatch {
    fn start(&mut self);
    /// Seconds since the last `start`.
    fn stop(&mut self) -> f64;
}

#[derive(Debug, Default)]
pub struct SystemStopwatch {
    started: Option<Instant>,
}

impl Stopwatch for SystemStopwatch {
    fn start(&mut self) {
        self.started = Some(Instant::now());
    }

    fn stop(&mut self) -> f64 {
        self.started.map_or(0.0, |s| s.elapsed().as_secs_f64())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_time_s: f64,
    pub inference_ms_per_sample: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `fit` then `predict` `repeats` times (at least once) and reports
/// medians. Returns the first repeat's model and predictions.
pub fn measure_timing<M, P, E>(
    mut fit: impl FnMut() -> Result<M, E>,
    mut predict: impl FnMut(&M) -> Result<P, E>,
    n_test: usize,
    repeats: usize,
    clock: &mut dyn Stopwatch,
) -> Result<(Timing, M, P), E> {
    let repeats = repeats.max(1);
    let mut train = Vec::with_capacity(repeats);
    let mut infer = Vec::with_capacity(repeats);
    let mut first: Option<(M, P)> = None;
    for _ in 0..repeats {
        clock.start();
        let m = fit()?;
        train.push(clock.stop());
        clock.start();
        let p = predict(&m)?;
        infer.push(clock.stop() * 1e3 / n_test.max(1) as f64);
        if first.is_none() {
            first = Some((m, p));
        }
    }
    let (m, p) = first.expect("at least one repeat");
    Ok((
        Timing {
            train_time_s: median(train),
            inference_ms_per_sample: median(infer),
        },
        m,
        p,
    ))
}
