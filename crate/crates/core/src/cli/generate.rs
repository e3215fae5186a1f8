//! Synthetic traces for the experiments.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::rational::{frac, int, Rational};
use crate::semantics::{Trace, TraceRecord};

/// Bus lines of the case study, in input declaration order.
pub const LINES: [&str; 3] = ["university", "city", "night"];

/// Expected boardings per hour of day.
pub fn hourly_rate(line: &str, hour: u32) -> f64 {
    match line {
        "university" if (7..18).contains(&hour) => 80.0,
        "city" if (6..22).contains(&hour) => {
            if hour == 12 {
                75.0
            } else {
                50.0
            }
        }
        "night" if !(5..22).contains(&hour) => 10.0,
        _ => 0.0,
    }
}

/// Mean crowdedness (1 to 10) of a line at an hour of day.
pub fn crowdedness_profile(line: &str, hour: u32) -> f64 {
    let h = hour as f64;
    let peak = |center: f64, width: f64| (-(h - center).powi(2) / (2.0 * width * width)).exp();
    match line {
        "university" => 3.0 + 5.0 * peak(8.0, 1.5).max(peak(16.5, 1.5)),
        "city" => 3.5 + 4.0 * peak(12.0, 2.5),
        _ => 4.0 + 2.0 * peak(1.0, 2.0),
    }
}

/// Boardings of three bus lines, one record per millisecond with events.
pub fn casestudy_trace(seed: u64, days: u32) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: BTreeMap<u64, BTreeMap<String, f64>> = BTreeMap::new();
    for day in 0..days as u64 {
        for hour in 0..24u32 {
            for line in LINES {
                let rate = hourly_rate(line, hour);
                if rate == 0.0 {
                    continue;
                }
                let n = Poisson::new(rate).unwrap().sample(&mut rng) as u64;
                let value = Normal::new(crowdedness_profile(line, hour), 1.5).unwrap();
                for _ in 0..n {
                    let ms = (day * 24 + hour as u64) * 3_600_000 + rng.random_range(0..3_600_000);
                    let v = value.sample(&mut rng).round().clamp(1.0, 10.0);
                    // a second boarding on the same line in the same millisecond is dropped
                    events.entry(ms).or_default().entry(line.to_string()).or_insert(v);
                }
            }
        }
    }
    let records = events.into_iter().map(|(ms, values)| TraceRecord { time: frac(ms as i64, 1000), values }).collect();
    Trace { records, clamped: 0 }
}

/// `vpb` rating events per second over `[0, horizon)` seconds.
pub fn ratings_trace(seed: u64, vpb: u32, horizon: u32) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = vec![];
    for s in 0..horizon as i64 {
        for j in 0..vpb as i64 {
            let time: Rational = int(s) + frac(2 * j + 1, 2 * vpb as i64);
            let values = [
                ("score".to_string(), rng.random_range(1..=6) as f64),
                ("conf".to_string(), rng.random_range(-1..=1) as f64),
            ]
            .into_iter()
            .collect();
            records.push(TraceRecord { time, values });
        }
    }
    Trace { records, clamped: 0 }
}
