//! Running extrema and the decomposition of `X - inf X` into excursions.
//!
//! On a grid the reflected process `R = X - X̲` is zero only at points where
//! a new running minimum is attained (up to `zero_tol`). An excursion is a
//! maximal run of points with `R > zero_tol`; it starts at the preceding zero
//! point and its lifetime is the relative time of its last positive point.
//! Left limits at jump times are observed as separate points, so an
//! excursion started by a jump from the minimum starts exactly at the jump.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::pathsim::{Path, PathPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionJump {
    /// Time since the start of the excursion.
    pub time: f64,
    pub size: f64,
}

/// Excursion values on its own grid; `times[0] == 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trace {
    /// Right-continuous value at relative time `s`.
    pub fn value_at(&self, s: f64) -> Option<f64> {
        let k = self.times.partition_point(|&u| u <= s);
        (k > 0).then(|| self.values[k - 1])
    }

    fn push(&mut self, t: f64, v: f64) {
        self.times.push(t);
        self.values.push(v);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub start_time: f64,
    pub lifetime: f64,
    pub height: f64,
    /// Still open when observation stopped; `lifetime` and `height` are then lower bounds.
    pub censored: bool,
    pub jumps: Vec<ExcursionJump>,
    pub trace: Option<Trace>,
    pub shard: u64,
    pub replica: u64,
}

impl Excursion {
    /// Earliest jump larger than `x` in `[0, ζ]`, as `(time, size)`.
    pub fn first_big_jump(&self, x: f64) -> Option<(f64, f64)> {
        self.jumps
            .iter()
            .find(|j| j.size > x && j.time <= self.lifetime)
            .map(|j| (j.time, j.size))
    }

    /// Number of jumps larger than `x` in `(0, t ∧ ζ]`.
    pub fn big_jump_count(&self, x: f64, t: f64) -> usize {
        let end = t.min(self.lifetime);
        self.jumps.iter().filter(|j| j.size > x && j.time > 0.0 && j.time <= end).count()
    }

    /// Like [`big_jump_count`](Self::big_jump_count) but including a jump at time 0,
    /// which is how jump-started excursions begin.
    pub fn big_jumps_in_lifetime(&self, x: f64) -> usize {
        self.jumps.iter().filter(|j| j.size > x && j.time <= self.lifetime).count()
    }

    /// Largest jump in `[0, t ∧ ζ]` as `(time, size)`; ties go to the earlier jump.
    pub fn largest_jump(&self, t: f64) -> Option<(f64, f64)> {
        let end = t.min(self.lifetime);
        self.jumps
            .iter()
            .filter(|j| j.time <= end)
            .fold(None, |best: Option<&ExcursionJump>, j| match best {
                Some(b) if b.size >= j.size => Some(b),
                _ => Some(j),
            })
            .map(|j| (j.time, j.size))
    }

    pub fn value_at(&self, s: f64) -> Option<f64> {
        if s > self.lifetime && !self.censored {
            return Some(0.0);
        }
        self.trace.as_ref().and_then(|tr| tr.value_at(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    /// Keep traces only of excursions living at least this long.
    pub min_lifetime: f64,
    /// Record values up to this relative time.
    pub max_time: f64,
}

impl TraceSpec {
    pub fn all() -> Self {
        Self { min_lifetime: 0.0, max_time: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub zero_tol: f64,
    /// Excursions shorter than this are counted but not kept.
    pub min_lifetime: f64,
    pub trace: Option<TraceSpec>,
}

impl DecomposeOptions {
    pub fn new(zero_tol: f64, min_lifetime: f64) -> Result<Self> {
        if !(zero_tol >= 0.0 && zero_tol.is_finite()) {
            return Err(domain(format!("zero_tol must be nonnegative, got {zero_tol}")));
        }
        if !(min_lifetime >= 0.0) {
            return Err(domain(format!("minimum lifetime must be nonnegative, got {min_lifetime}")));
        }
        Ok(Self { zero_tol, min_lifetime, trace: None })
    }

    pub fn with_trace(mut self, trace: TraceSpec) -> Self {
        self.trace = Some(trace);
        self
    }
}

#[derive(Debug)]
struct OpenExcursion {
    start: f64,
    last_positive: f64,
    height: f64,
    jumps: Vec<ExcursionJump>,
}

/// Streaming decomposition; feed points in time order.
#[derive(Debug)]
pub struct ExcursionTracker {
    opts: DecomposeOptions,
    tag: (u64, u64),
    origin: Option<f64>,
    running_min: f64,
    last_zero: (f64, f64),
    open: Option<OpenExcursion>,
    closed: Vec<Excursion>,
    short: u64,
    last_time: f64,
    // reused across excursions to avoid an allocation per excursion
    trace_buf: Trace,
    jump_buf: Vec<ExcursionJump>,
}

impl ExcursionTracker {
    pub fn new(opts: DecomposeOptions) -> Self {
        Self {
            opts,
            tag: (0, 0),
            origin: None,
            running_min: f64::INFINITY,
            last_zero: (0.0, 0.0),
            open: None,
            closed: Vec::new(),
            short: 0,
            last_time: 0.0,
            trace_buf: Trace::default(),
            jump_buf: Vec::new(),
        }
    }

    /// Shard and replica recorded on every excursion.
    pub fn tagged(mut self, shard: u64, replica: u64) -> Self {
        self.tag = (shard, replica);
        self
    }

    pub fn push(&mut self, p: &PathPoint) {
        if self.origin.is_none() {
            self.origin = Some(p.value);
        }
        if p.jump.is_some() {
            self.observe(p.time, p.left_limit(), None);
        }
        self.observe(p.time, p.value, p.jump);
        self.last_time = p.time;
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    /// Age of the open excursion at the last observed time.
    pub fn open_age(&self) -> Option<f64> {
        self.open.as_ref().map(|o| self.last_time - o.start)
    }

    /// Height reached so far by the open excursion.
    pub fn open_height(&self) -> Option<f64> {
        self.open.as_ref().map(|o| o.height)
    }

    pub fn running_min(&self) -> f64 {
        self.running_min
    }

    /// Drop in the running minimum since the first point.
    pub fn infimum_descent(&self) -> f64 {
        match self.origin {
            Some(x0) => x0 - self.running_min,
            None => 0.0,
        }
    }

    fn observe(&mut self, t: f64, v: f64, jump: Option<f64>) {
        if v < self.running_min {
            self.running_min = v;
        }
        let r = v - self.running_min;
        if r > self.opts.zero_tol {
            let trace_max = self.opts.trace.map(|s| s.max_time);
            let (z_time, z_val) = self.last_zero;
            if self.open.is_none() {
                self.trace_buf.times.clear();
                self.trace_buf.values.clear();
                if trace_max.is_some() {
                    self.trace_buf.push(0.0, z_val);
                }
                self.jump_buf.clear();
                self.open = Some(OpenExcursion {
                    start: z_time,
                    last_positive: z_time,
                    height: 0.0,
                    jumps: std::mem::take(&mut self.jump_buf),
                });
            }
            let open = self.open.as_mut().expect("just opened");
            let rel = t - open.start;
            open.last_positive = t;
            open.height = open.height.max(r);
            if let Some(size) = jump {
                open.jumps.push(ExcursionJump { time: rel, size });
            }
            if let Some(max) = trace_max {
                if rel <= max {
                    self.trace_buf.push(rel, r);
                }
            }
        } else {
            if let Some(open) = self.open.take() {
                let rel = t - open.start;
                if let Some(spec) = self.opts.trace {
                    if rel <= spec.max_time {
                        self.trace_buf.push(rel, r);
                    }
                }
                self.close(open, false);
            }
            self.last_zero = (t, r);
        }
    }

    fn close(&mut self, mut open: OpenExcursion, censored: bool) {
        let lifetime = open.last_positive - open.start;
        if lifetime < self.opts.min_lifetime {
            self.short += 1;
            open.jumps.clear();
            self.jump_buf = open.jumps;
            return;
        }
        let keep_trace = self.opts.trace.is_some_and(|s| lifetime >= s.min_lifetime);
        let jumps = if open.jumps.is_empty() {
            self.jump_buf = open.jumps;
            Vec::new()
        } else {
            open.jumps
        };
        self.closed.push(Excursion {
            start_time: open.start,
            lifetime,
            height: open.height,
            censored,
            jumps,
            trace: keep_trace.then(|| self.trace_buf.clone()),
            shard: self.tag.0,
            replica: self.tag.1,
        });
    }

    /// Closes the books; an excursion still open is kept as censored.
    pub fn finish(mut self) -> TrackerOutput {
        if let Some(open) = self.open.take() {
            self.close(open, true);
        }
        TrackerOutput {
            excursions: self.closed,
            short: self.short,
            elapsed: self.last_time,
            infimum_descent: match self.origin {
                Some(x0) => x0 - self.running_min,
                None => 0.0,
            },
        }
    }
}

#[derive(Debug)]
pub struct TrackerOutput {
    pub excursions: Vec<Excursion>,
    pub short: u64,
    pub elapsed: f64,
    pub infimum_descent: f64,
}

/// Detected excursions plus the bookkeeping needed for ratio estimates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExcursionEnsemble {
    pub excursions: Vec<Excursion>,
    pub horizon_total: f64,
    pub delta: f64,
    pub zero_tol: f64,
    pub model_tag: String,
    pub negative_drift: bool,
    pub spectrally_positive: bool,
    /// Total drop of the running minimum over all paths.
    pub infimum_descent: f64,
    pub n_paths: usize,
    /// Excursions detected but shorter than `delta`.
    pub n_short: u64,
}

impl ExcursionEnsemble {
    pub fn empty(delta: f64, zero_tol: f64) -> Self {
        Self { delta, zero_tol, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.excursions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excursions.is_empty()
    }

    pub fn absorb(&mut self, out: TrackerOutput) {
        self.excursions.extend(out.excursions);
        self.n_short += out.short;
        self.horizon_total += out.elapsed;
        self.infimum_descent += out.infimum_descent;
        self.n_paths += 1;
    }

    /// Associative merge; excursion order follows argument order.
    pub fn merge(mut self, other: Self) -> Self {
        self.excursions.extend(other.excursions);
        self.horizon_total += other.horizon_total;
        self.infimum_descent += other.infimum_descent;
        self.n_paths += other.n_paths;
        self.n_short += other.n_short;
        self
    }

    pub fn uncensored(&self) -> impl Iterator<Item = &Excursion> {
        self.excursions.iter().filter(|e| !e.censored)
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.excursions.is_empty() {
            0.0
        } else {
            self.excursions.iter().filter(|e| e.censored).count() as f64 / self.excursions.len() as f64
        }
    }

    /// One row per excursion: `shard,replica,start,lifetime,height,J_time,J_size,censored`.
    /// `J` is the first jump above `jump_threshold`; empty when absent.
    pub fn write_summary_csv<W: Write>(&self, mut w: W, jump_threshold: f64) -> Result<()> {
        writeln!(w, "shard,replica,start,lifetime,height,J_time,J_size,censored")?;
        for e in &self.excursions {
            let (jt, js) = match e.first_big_jump(jump_threshold) {
                Some((t, s)) => (t.to_string(), s.to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                e.shard, e.replica, e.start_time, e.lifetime, e.height, jt, js, e.censored as u8
            )?;
        }
        Ok(())
    }
}

/// Prefix minimum of the path including left limits at jumps.
pub fn running_infimum(path: &Path) -> Vec<f64> {
    let mut m = f64::INFINITY;
    path.points()
        .map(|p| {
            m = m.min(p.left_limit()).min(p.value);
            m
        })
        .collect()
}

/// Prefix maximum of the path including left limits at jumps.
pub fn running_supremum(path: &Path) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    path.points()
        .map(|p| {
            m = m.max(p.left_limit()).max(p.value);
            m
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStats {
    pub running_inf: Vec<f64>,
    pub running_sup: Vec<f64>,
}

impl PathStats {
    pub fn compute(path: &Path) -> Self {
        Self { running_inf: running_infimum(path), running_sup: running_supremum(path) }
    }
}

/// Decomposes a stored path, keeping full traces.
pub fn decompose_excursions(path: &Path, zero_tol: f64, min_lifetime: f64) -> Result<ExcursionEnsemble> {
    let opts = DecomposeOptions::new(zero_tol, min_lifetime)?.with_trace(TraceSpec::all());
    let mut ens = ExcursionEnsemble::empty(min_lifetime, zero_tol);
    if path.is_empty() {
        return Ok(ens);
    }
    let mut tracker = ExcursionTracker::new(opts);
    for p in path.points() {
        tracker.push(&p);
    }
    ens.absorb(tracker.finish());
    Ok(ens)
}

/// `g_t`: last time `s <= t` at which the path or its left limit sits at the
/// infimum over `[0, t]`, within `zero_tol`. Ties resolve to the latest time.
pub fn last_passage_at_infimum(path: &Path, t: f64, zero_tol: f64) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::Contract("empty path".into()));
    }
    if !(t >= 0.0 && t <= path.horizon() * (1.0 + 1e-12)) {
        return Err(domain(format!("t = {t} outside [0, {}]", path.horizon())));
    }
    let mut m = f64::INFINITY;
    let mut g = 0.0;
    for p in path.points().take_while(|p| p.time <= t) {
        for x in [p.left_limit(), p.value] {
            if x < m {
                m = x;
                g = p.time;
            } else if x <= m + zero_tol {
                g = p.time;
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathsim::JumpMark;

    /// Brute-force reflected process on the literal sequence.
    fn reflected_brute(values: &[f64]) -> Vec<f64> {
        (0..values.len())
            .map(|i| values[i] - values[..=i].iter().cloned().fold(f64::INFINITY, f64::min))
            .collect()
    }

    #[test]
    fn running_infimum_examples() {
        assert_eq!(running_infimum(&Path::unit_grid(&[0.0, 1.0, -1.0, 2.0])), vec![0.0, 0.0, -1.0, -1.0]);
        let dec = [3.0, 2.0, 2.0, -1.0];
        assert_eq!(running_infimum(&Path::unit_grid(&dec)), dec.to_vec());
        assert_eq!(running_infimum(&Path::unit_grid(&[1.5; 4])), vec![1.5; 4]);
        assert_eq!(running_supremum(&Path::unit_grid(&[0.0, 1.0, -1.0, 2.0])), vec![0.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn running_infimum_sees_left_limits() {
        let p = Path::with_jumps(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.0], vec![JumpMark { index: 1, size: 3.0 }]).unwrap();
        assert_eq!(running_infimum(&p), vec![0.0, -2.0, -2.0]);
    }

    #[test]
    fn decomposition_of_literal_sequence() {
        let values = [0.0, 1.0, 2.0, 0.0, -1.0, 1.0, -1.0];
        assert_eq!(reflected_brute(&values), vec![0.0, 1.0, 2.0, 0.0, 0.0, 2.0, 0.0]);
        let ens = decompose_excursions(&Path::unit_grid(&values), 0.0, 1.0).unwrap();
        assert_eq!(ens.len(), 2);
        let (a, b) = (&ens.excursions[0], &ens.excursions[1]);
        assert_eq!((a.start_time, a.lifetime, a.height), (0.0, 2.0, 2.0));
        assert_eq!((b.start_time, b.lifetime, b.height), (4.0, 1.0, 2.0));
        assert!(!a.censored && !b.censored);
        assert_eq!(a.trace.as_ref().unwrap().values, vec![0.0, 1.0, 2.0, 0.0]);
        assert_eq!(ens.horizon_total, 6.0);
    }

    #[test]
    fn decreasing_path_and_large_delta_give_nothing() {
        let ens = decompose_excursions(&Path::unit_grid(&[0.0, -1.0, -2.0, -3.5]), 0.0, 1.0).unwrap();
        assert!(ens.is_empty());
        let ens = decompose_excursions(&Path::unit_grid(&[0.0, 1.0, 2.0, 0.0, -1.0]), 0.0, 10.0).unwrap();
        assert!(ens.is_empty());
        assert_eq!(ens.n_short, 1);
        assert!(decompose_excursions(&Path::default(), 0.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn open_excursion_is_censored() {
        let ens = decompose_excursions(&Path::unit_grid(&[0.0, -1.0, 1.0, 2.0, 3.0]), 0.0, 1.0).unwrap();
        assert_eq!(ens.len(), 1);
        let e = &ens.excursions[0];
        assert!(e.censored);
        assert_eq!((e.start_time, e.lifetime, e.height), (1.0, 3.0, 4.0));
        assert!((ens.censored_fraction() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jump_started_excursion_starts_at_jump() {
        // drift down to -0.5 just before the jump at 1.3, then a jump of 2
        let p = Path::with_jumps(
            vec![0.0, 1.0, 1.3, 2.0, 3.0],
            vec![0.0, -0.4, 1.5, 0.7, -1.0],
            vec![JumpMark { index: 2, size: 2.0 }],
        )
        .unwrap();
        let ens = decompose_excursions(&p, 0.0, 0.1).unwrap();
        assert_eq!(ens.len(), 1);
        let e = &ens.excursions[0];
        assert_eq!(e.start_time, 1.3);
        assert!((e.lifetime - 0.7).abs() < 1e-12);
        assert!((e.height - 2.0).abs() < 1e-12);
        assert_eq!(e.first_big_jump(1.0), Some((0.0, 2.0)));
        assert_eq!(e.big_jumps_in_lifetime(1.0), 1);
    }

    #[test]
    fn big_jump_queries() {
        let jumps = [(0.2, 0.5), (0.4, 3.0), (0.6, 2.0)]
            .iter()
            .map(|&(time, size)| ExcursionJump { time, size })
            .collect();
        let e = Excursion {
            start_time: 0.0,
            lifetime: 1.0,
            height: 4.0,
            censored: false,
            jumps,
            trace: None,
            shard: 0,
            replica: 0,
        };
        assert_eq!(e.first_big_jump(1.0), Some((0.4, 3.0)));
        assert_eq!(e.first_big_jump(5.0), None);
        assert_eq!(e.first_big_jump(0.1), Some((0.2, 0.5)));
        assert_eq!(e.big_jump_count(1.0, 1.0), 2);
        assert_eq!(e.big_jump_count(1.0, 0.0), 0);
        assert_eq!(e.big_jump_count(1.0, 0.5), 1);
        for x in [0.1, 1.0, 2.5, 3.0, 10.0] {
            assert_eq!(e.first_big_jump(x).is_some(), e.big_jump_count(x, e.lifetime) >= 1);
        }
    }

    #[test]
    fn last_passage_examples() {
        let dec = Path::unit_grid(&[0.0, -1.0, -2.0, -3.0]);
        for t in [0.0, 1.0, 2.0, 3.0] {
            assert_eq!(last_passage_at_infimum(&dec, t, 0.0).unwrap(), t);
        }
        let p = Path::unit_grid(&[0.0, -1.0, 2.0, 3.0]);
        assert_eq!(last_passage_at_infimum(&p, 3.0, 0.0).unwrap(), 1.0);
        assert!(last_passage_at_infimum(&p, 3.5, 0.0).is_err());
        // ties go to the latest time
        let tie = Path::unit_grid(&[0.0, -1.0, 0.5, -1.0, 2.0]);
        assert_eq!(last_passage_at_infimum(&tie, 4.0, 0.0).unwrap(), 3.0);
    }

    #[test]
    fn summary_csv_layout() {
        let ens = decompose_excursions(&Path::unit_grid(&[0.0, 1.0, 2.0, 0.0]), 0.0, 1.0).unwrap();
        let mut buf = Vec::new();
        ens.write_summary_csv(&mut buf, 1.0).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "shard,replica,start,lifetime,height,J_time,J_size,censored\n0,0,0,2,2,,,0\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn walk() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-3i32..4, 1..200)
                .prop_map(|steps| {
                    let mut x = 0.0;
                    let mut out = vec![0.0];
                    for s in steps {
                        x += s as f64 * 0.25;
                        out.push(x);
                    }
                    out
                })
        }

        proptest! {
            #[test]
            fn infimum_bounds_path(values in walk()) {
                let p = Path::unit_grid(&values);
                let st = PathStats::compute(&p);
                for i in 0..values.len() {
                    prop_assert!(st.running_inf[i] <= values[i] && values[i] <= st.running_sup[i]);
                    if i > 0 {
                        prop_assert!(st.running_inf[i] <= st.running_inf[i - 1]);
                        prop_assert!(st.running_sup[i] >= st.running_sup[i - 1]);
                    }
                }
            }

            #[test]
            fn excursions_tile_the_positive_set(values in walk(), tol in 0.0f64..0.6) {
                let p = Path::unit_grid(&values);
                let ens = decompose_excursions(&p, tol, 0.0).unwrap();
                let refl = reflected_brute(&values);
                let positive = refl.iter().filter(|&&r| r > tol).count() as f64;
                let covered: f64 = ens.excursions.iter().map(|e| e.lifetime).sum();
                // each run of k positive unit-grid points is an excursion of lifetime k
                prop_assert_eq!(covered, positive);
                for w in ens.excursions.windows(2) {
                    prop_assert!(w[0].start_time + w[0].lifetime < w[1].start_time + 1e-12);
                }
                for e in &ens.excursions {
                    prop_assert!(e.height > tol && e.lifetime >= 1.0);
                }
            }

            #[test]
            fn mirrored_path_covers_the_rest(values in walk()) {
                // excursions of X - inf X and of sup X - X together occupy the
                // horizon up to points where both reflected processes vanish
                let p = Path::unit_grid(&values);
                let neg: Vec<f64> = values.iter().map(|v| -v).collect();
                let below = decompose_excursions(&p, 0.0, 0.0).unwrap();
                let above = decompose_excursions(&Path::unit_grid(&neg), 0.0, 0.0).unwrap();
                let occupied: f64 = below.excursions.iter().chain(&above.excursions).map(|e| e.lifetime).sum();
                let horizon = p.horizon();
                prop_assert!(occupied <= 2.0 * horizon + 1e-9);
                let st = PathStats::compute(&p);
                let both_zero = (1..values.len())
                    .filter(|&i| st.running_inf[i] == values[i] && st.running_sup[i] == values[i])
                    .count() as f64;
                prop_assert!(occupied + both_zero >= horizon - 1e-9);
            }
        }
    }
}
