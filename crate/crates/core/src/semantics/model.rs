use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use crate::rational::{format_rational, parse_rational, to_f64, Rational};
use crate::speclang::{Specification, Window};

use super::graph::DependencyGraph;
use super::pacing::ResolvedPacing;
use super::TraceError;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub time: Rational,
    pub values: BTreeMap<String, f64>,
}

/// Input events ordered by strictly increasing time.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Values moved into their declared range at ingest.
    pub clamped: usize,
}

impl Trace {
    /// Validates ordering and names, clamping values into declared ranges.
    pub fn ingest(spec: &Specification, records: Vec<TraceRecord>) -> Result<Trace, TraceError> {
        let mut clamped = 0;
        let mut out = Vec::with_capacity(records.len());
        for (row, mut r) in records.into_iter().enumerate() {
            if r.time < Rational::from_integer(0.into()) {
                return Err(TraceError::NegativeTime { row });
            }
            if let Some(prev) = out.last() {
                let prev: &TraceRecord = prev;
                if r.time <= prev.time {
                    return Err(TraceError::NotIncreasing { row });
                }
            }
            for (name, v) in r.values.iter_mut() {
                let input = spec.input(name).ok_or_else(|| TraceError::UnknownInput(name.clone()))?;
                if !v.is_finite() {
                    return Err(TraceError::BadValue { row, column: name.clone() });
                }
                if let Some((lo, hi)) = &input.range {
                    let (lo, hi) = (to_f64(lo), to_f64(hi));
                    if *v < lo || *v > hi {
                        *v = v.clamp(lo, hi);
                        clamped += 1;
                    }
                }
            }
            out.push(r);
        }
        Ok(Trace { records: out, clamped })
    }

    pub fn from_csv(spec: &Specification, text: &str) -> Result<Trace, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers().map_err(|e| TraceError::Csv(e.to_string()))?.iter().map(String::from).collect();
        if headers.first().map(String::as_str) != Some("time") {
            return Err(TraceError::MissingTimeColumn);
        }
        let mut records = vec![];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| TraceError::Csv(e.to_string()))?;
            let time = rec
                .get(0)
                .and_then(parse_rational)
                .ok_or(TraceError::BadValue { row, column: "time".into() })?;
            let mut values = BTreeMap::new();
            for (col, cell) in headers.iter().zip(rec.iter()).skip(1) {
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell.parse().map_err(|_| TraceError::BadValue { row, column: col.clone() })?;
                values.insert(col.clone(), v);
            }
            records.push(TraceRecord { time, values });
        }
        for col in headers.iter().skip(1) {
            if !spec.is_input(col) {
                return Err(TraceError::UnknownInput(col.clone()));
            }
        }
        Trace::ingest(spec, records)
    }

    /// CSV with one column per declared input.
    pub fn to_csv(&self, spec: &Specification) -> String {
        let mut s = String::from("time");
        for i in &spec.inputs {
            s.push(',');
            s.push_str(&i.name);
        }
        s.push('\n');
        for r in &self.records {
            s.push_str(&format_rational(&r.time));
            for i in &spec.inputs {
                s.push(',');
                if let Some(v) = r.values.get(&i.name) {
                    s.push_str(&format!("{v}"));
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn last_time(&self) -> Option<&Rational> {
        self.records.last().map(|r| &r.time)
    }
}

/// Firing schedule of every stream over a discrete timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct PacingModel {
    pub timemap: Vec<Rational>,
    /// Per graph node, ascending firing timestamps.
    pub fires: Vec<Vec<usize>>,
    /// Trace record at each timestamp, if any.
    pub record_at: Vec<Option<usize>>,
}

pub fn derive_pacing_model(
    graph: &DependencyGraph,
    pacing: &[ResolvedPacing],
    trace: &Trace,
    horizon: &Rational,
) -> PacingModel {
    let horizon = match trace.last_time() {
        Some(t) if t > horizon => t.clone(),
        _ => horizon.clone(),
    };
    let mut points: BTreeMap<Rational, Option<usize>> = BTreeMap::new();
    for (i, r) in trace.records.iter().enumerate() {
        points.insert(r.time.clone(), Some(i));
    }
    let periods: BTreeSet<Rational> = pacing.iter().filter_map(|p| p.period().cloned()).collect();
    for d in &periods {
        let mut t = Rational::from_integer(0.into());
        while t <= horizon {
            points.entry(t.clone()).or_insert(None);
            t += d;
        }
    }
    let timemap: Vec<Rational> = points.keys().cloned().collect();
    let record_at: Vec<Option<usize>> = points.values().cloned().collect();
    let mut fires = vec![vec![]; graph.len()];
    for (id, p) in pacing.iter().enumerate() {
        let name = graph.name(id);
        fires[id] = match p {
            ResolvedPacing::Input => (0..timemap.len())
                .filter(|&t| record_at[t].is_some_and(|r| trace.records[r].values.contains_key(name)))
                .collect(),
            ResolvedPacing::EventBased(s) => (0..timemap.len())
                .filter(|&t| record_at[t].is_some_and(|r| s.iter().all(|i| trace.records[r].values.contains_key(i))))
                .collect(),
            ResolvedPacing::Periodic(d) => (0..timemap.len()).filter(|&t| (&timemap[t] / d).is_integer()).collect(),
            ResolvedPacing::Alias => vec![],
        };
    }
    PacingModel { timemap, fires, record_at }
}

/// Most recent firing at or before `t` for `o = 0`, else the `o`-th most recent strictly before `t`.
pub fn last_event(fires: &[usize], t: usize, o: u32) -> Option<usize> {
    let k = if o == 0 { fires.partition_point(|&s| s <= t) } else { fires.partition_point(|&s| s < t) };
    let back = o.max(1) as usize;
    (k >= back).then(|| fires[k - back])
}

impl PacingModel {
    pub fn len(&self) -> usize {
        self.timemap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timemap.is_empty()
    }

    pub fn fires_at(&self, id: usize, t: usize) -> bool {
        self.fires[id].binary_search(&t).is_ok()
    }

    pub fn last_event(&self, y: usize, t: usize, o: u32) -> Option<usize> {
        last_event(&self.fires[y], t, o)
    }

    /// Index range into `fires[y]` of the firings inside the window ending at `t`.
    pub fn window_range(&self, y: usize, t: usize, w: &Window, closed: bool) -> Range<usize> {
        let fires = &self.fires[y];
        let end = fires.partition_point(|&s| s <= t);
        let start = match w {
            Window::All => 0,
            Window::Span(len) => {
                let from = &self.timemap[t] - len;
                if closed {
                    fires.partition_point(|&s| self.timemap[s] < from)
                } else {
                    fires.partition_point(|&s| self.timemap[s] <= from)
                }
            }
        };
        start.min(end)..end
    }

    /// Firings `t'` of `y` with `realtime(t) − W < realtime(t') ≤ realtime(t)` (closed: `≤` on both ends).
    pub fn window_times(&self, y: usize, t: usize, w: &Window, closed: bool) -> Vec<usize> {
        self.fires[y][self.window_range(y, t, w, closed)].to_vec()
    }

    /// Number of firings of `x` up to `t` that read the same value of `y` as `t` does.
    pub fn holdn(&self, x: usize, y: usize, t: usize) -> usize {
        let anchor = self.last_event(y, t, 0);
        self.fires[x].iter().take_while(|&&s| s <= t).filter(|&&s| self.last_event(y, s, 0) == anchor).count()
    }
}
