//! Trace-driven encoder -> link -> decoder pipeline with first-come,
//! first-served queues at each stage.
//!
//! All times are milliseconds. Bandwidth is bytes per second, so a frame
//! occupies the link for `bytes * 1000 / B` ms.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares latency slope (ms per frame) above which a run is flagged
/// as building a backlog.
pub const BACKLOG_SLOPE_MS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(rename = "t_enc_ms")]
    pub enc_ms: f64,
    pub bytes: u64,
    #[serde(rename = "t_dec_ms")]
    pub dec_ms: f64,
}

impl TraceRecord {
    pub fn new(enc_ms: f64, bytes: u64, dec_ms: f64) -> Self {
        Self {
            enc_ms,
            bytes,
            dec_ms,
        }
    }

    fn check(&self, i: usize) -> Result<()> {
        let ok = |t: f64| t.is_finite() && t >= 0.0;
        if ok(self.enc_ms) && ok(self.dec_ms) {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "trace record {i} has invalid times ({}, {})",
                self.enc_ms, self.dec_ms
            )))
        }
    }
}

/// Start and finish of one frame at one stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Span {
    pub start: f64,
    pub finish: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FrameTiming {
    pub avail: f64,
    pub enc: Span,
    pub net: Span,
    pub dec: Span,
}

impl FrameTiming {
    /// Start of encoding to end of decoding.
    pub fn latency(&self) -> f64 {
        self.dec.finish - self.enc.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub bandwidth: f64,
    pub arrival_period_ms: f64,
    pub frames: Vec<FrameTiming>,
}

impl SimResult {
    pub fn latencies(&self) -> Vec<f64> {
        self.frames.iter().map(FrameTiming::latency).collect()
    }

    pub fn mean_latency(&self) -> f64 {
        mean(&self.latencies())
    }

    /// Frames completed per second at the decoder.
    pub fn throughput(&self) -> f64 {
        let end = self.frames.last().map_or(0.0, |f| f.dec.finish);
        if end > 0.0 {
            self.frames.len() as f64 * 1000.0 / end
        } else {
            f64::INFINITY
        }
    }

    pub fn backlog_slope(&self) -> f64 {
        trailing_slope(&self.latencies())
    }

    pub fn backlogged(&self) -> bool {
        self.backlog_slope() > BACKLOG_SLOPE_MS
    }
}

pub fn simulate(trace: &[TraceRecord], bandwidth: f64, arrival_period_ms: f64) -> Result<SimResult> {
    if !(bandwidth > 0.0) {
        return Err(Error::Parameter(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if !(arrival_period_ms.is_finite() && arrival_period_ms >= 0.0) {
        return Err(Error::Parameter(format!(
            "arrival period must be non-negative, got {arrival_period_ms}"
        )));
    }
    if trace.is_empty() {
        return Err(Error::Usage("empty trace".into()));
    }
    let mut frames = Vec::with_capacity(trace.len());
    let mut prev = FrameTiming::default();
    for (i, r) in trace.iter().enumerate() {
        r.check(i)?;
        let avail = i as f64 * arrival_period_ms;
        let enc_start = avail.max(prev.enc.finish);
        let enc_finish = enc_start + r.enc_ms;
        let net_start = enc_finish.max(prev.net.finish);
        let net_finish = net_start + r.bytes as f64 * 1000.0 / bandwidth;
        let dec_start = net_finish.max(prev.dec.finish);
        let dec_finish = dec_start + r.dec_ms;
        prev = FrameTiming {
            avail,
            enc: Span {
                start: enc_start,
                finish: enc_finish,
            },
            net: Span {
                start: net_start,
                finish: net_finish,
            },
            dec: Span {
                start: dec_start,
                finish: dec_finish,
            },
        };
        frames.push(prev);
    }
    Ok(SimResult {
        bandwidth,
        arrival_period_ms,
        frames,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Average of the two middle values for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it.
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Least-squares slope of `ys` against their index.
pub fn ls_slope(ys: &[f64]) -> f64 {
    let n = ys.len();
    if n < 2 {
        return 0.0;
    }
    let xm = (n - 1) as f64 / 2.0;
    let ym = mean(ys);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xm;
        num += dx * (y - ym);
        den += dx * dx;
    }
    num / den
}

/// Slope over the last half of the sequence (at least two points).
pub fn trailing_slope(ys: &[f64]) -> f64 {
    let start = (ys.len() / 2).min(ys.len().saturating_sub(2));
    ls_slope(&ys[start..])
}

/// One summary line per simulated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub bandwidth_bytes_per_s: f64,
    pub frames: usize,
    pub mean_latency_ms: f64,
    pub median_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub throughput_fps: f64,
    pub backlog_slope_ms_per_frame: f64,
    pub backlog: bool,
}

pub fn summarize(result: &SimResult) -> SummaryRow {
    let lat = result.latencies();
    let slope = trailing_slope(&lat);
    SummaryRow {
        bandwidth_bytes_per_s: result.bandwidth,
        frames: lat.len(),
        mean_latency_ms: mean(&lat),
        median_latency_ms: median(&lat),
        p95_latency_ms: percentile(&lat, 95.0),
        throughput_fps: result.throughput(),
        backlog_slope_ms_per_frame: slope,
        backlog: slope > BACKLOG_SLOPE_MS,
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Format {
            offset: p.byte() as usize,
            msg: e.to_string(),
        },
        None => Error::Format {
            offset: 0,
            msg: e.to_string(),
        },
    }
}

/// Reads a trace CSV with header `t_enc_ms,bytes,t_dec_ms`.
pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let records = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<TraceRecord>, _>>()
        .map_err(csv_err)?;
    for (i, r) in records.iter().enumerate() {
        r.check(i)?;
    }
    Ok(records)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    read_trace(std::fs::File::open(path)?)
}

pub fn write_trace<W: Write>(writer: W, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in trace {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FrameRow {
    frame: usize,
    avail_ms: f64,
    enc_start_ms: f64,
    enc_finish_ms: f64,
    net_start_ms: f64,
    net_finish_ms: f64,
    dec_start_ms: f64,
    dec_finish_ms: f64,
    latency_ms: f64,
}

/// Per-frame stage times and latency, one row per frame.
pub fn write_frames<W: Write>(writer: W, result: &SimResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (i, f) in result.frames.iter().enumerate() {
        w.serialize(FrameRow {
            frame: i,
            avail_ms: f.avail,
            enc_start_ms: f.enc.start,
            enc_finish_ms: f.enc.finish,
            net_start_ms: f.net.start,
            net_finish_ms: f.net.finish,
            dec_start_ms: f.dec.start,
            dec_finish_ms: f.dec.finish,
            latency_ms: f.latency(),
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MB: u64 = 1_000_000;

    fn steady(n: usize) -> Vec<TraceRecord> {
        vec![TraceRecord::new(10.0, MB, 5.0); n]
    }

    #[test]
    fn unconstrained_link_gives_constant_latency() {
        let r = simulate(&steady(2), 100.0 * MB as f64, 0.0).unwrap();
        assert_eq!(r.latencies(), vec![25.0, 25.0]);
        assert_eq!(r.frames[1].enc, Span { start: 10.0, finish: 20.0 });
        assert_eq!(r.frames[1].net, Span { start: 20.0, finish: 30.0 });
        assert_eq!(r.frames[1].dec, Span { start: 30.0, finish: 35.0 });
        let s = summarize(&r);
        assert_eq!(s.mean_latency_ms, 25.0);
        assert!(!s.backlog);
    }

    #[test]
    fn link_bottleneck_builds_backlog() {
        let r = simulate(&steady(20), 50.0 * MB as f64, 0.0).unwrap();
        let lat = r.latencies();
        assert_eq!(&lat[..3], &[35.0, 45.0, 55.0]);
        for w in lat.windows(2) {
            assert_eq!(w[1] - w[0], 10.0);
        }
        let s = summarize(&r);
        assert!((s.backlog_slope_ms_per_frame - 10.0).abs() < 1e-9);
        assert!(s.backlog);
        // Link-bound: one frame every 20 ms after the pipeline fills.
        assert_eq!(r.frames[19].dec.finish, 10.0 + 20.0 * 20.0 + 5.0);
    }

    #[test]
    fn idle_pipeline_latency_is_service_sum() {
        let trace = vec![
            TraceRecord::new(3.0, 2000, 4.0),
            TraceRecord::new(7.5, 500, 1.0),
            TraceRecord::new(0.0, 0, 0.25),
        ];
        let r = simulate(&trace, 1e6, 1000.0).unwrap();
        assert_eq!(r.latencies(), vec![3.0 + 2.0 + 4.0, 7.5 + 0.5 + 1.0, 0.25]);
        let r = simulate(&trace, f64::INFINITY, 1000.0).unwrap();
        assert_eq!(r.latencies(), vec![7.0, 8.5, 0.25]);
    }

    #[test]
    fn bad_parameters() {
        assert!(matches!(simulate(&steady(1), 0.0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(simulate(&steady(1), -5.0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(simulate(&steady(1), f64::NAN, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(simulate(&steady(1), 1.0, -1.0), Err(Error::Parameter(_))));
        assert!(matches!(simulate(&[], 1.0, 0.0), Err(Error::Usage(_))));
        let bad = [TraceRecord::new(-1.0, 1, 1.0)];
        assert!(matches!(simulate(&bad, 1.0, 0.0), Err(Error::Input(_))));
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(percentile(&[7.0; 13], 95.0), 7.0);
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 95.0), 95.0);
        assert_eq!(percentile(&xs, 100.0), 100.0);
        assert_eq!(ls_slope(&[1.0, 3.0, 5.0, 7.0]), 2.0);
        assert_eq!(ls_slope(&[4.0]), 0.0);
        assert_eq!(trailing_slope(&[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]), 1.0);
        assert_eq!(trailing_slope(&[1.0, 4.0]), 3.0);
    }

    #[test]
    fn trace_csv_roundtrip() {
        let trace = vec![TraceRecord::new(1.5, 100, 2.25), TraceRecord::new(0.0, 7, 9.0)];
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        assert!(buf.starts_with(b"t_enc_ms,bytes,t_dec_ms\n"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), trace);
        let spaced = "t_enc_ms, bytes, t_dec_ms\n 1.5, 100, 2.25\n";
        assert_eq!(read_trace(spaced.as_bytes()).unwrap(), trace[..1]);
        assert!(matches!(
            read_trace("t_enc_ms,bytes,t_dec_ms\n1,abc,2\n".as_bytes()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            read_trace("t_enc_ms,bytes,t_dec_ms\n-1,3,2\n".as_bytes()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn frame_and_summary_csv() {
        let r = simulate(&steady(2), 1e8, 0.0).unwrap();
        let mut buf = Vec::new();
        write_frames(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().ends_with(",25.0"));
        let mut buf = Vec::new();
        write_summary(&mut buf, &[summarize(&r)]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("bandwidth_bytes_per_s,"));
    }

    fn trace() -> impl Strategy<Value = Vec<TraceRecord>> {
        prop::collection::vec(
            (0.0f64..50.0, 0u64..5_000_000, 0.0f64..50.0)
                .prop_map(|(e, b, d)| TraceRecord::new(e, b, d)),
            1..60,
        )
    }

    proptest! {
        #[test]
        fn more_bandwidth_never_hurts(t in trace(), b in 1e5f64..1e9, k in 1.0f64..10.0, p in 0.0f64..40.0) {
            let slow = simulate(&t, b, p).unwrap().latencies();
            let fast = simulate(&t, b * k, p).unwrap().latencies();
            for (f, s) in fast.iter().zip(&slow) {
                prop_assert!(f <= s);
            }
        }

        #[test]
        fn stage_times_are_ordered(t in trace(), b in 1e5f64..1e9, p in 0.0f64..40.0) {
            let r = simulate(&t, b, p).unwrap();
            for w in r.frames.windows(2) {
                prop_assert!(w[0].enc.finish <= w[1].enc.finish);
                prop_assert!(w[0].net.finish <= w[1].net.finish);
                prop_assert!(w[0].dec.finish <= w[1].dec.finish);
            }
            for f in &r.frames {
                prop_assert!(f.avail <= f.enc.start);
                prop_assert!(f.enc.finish <= f.net.start);
                prop_assert!(f.net.finish <= f.dec.start);
                prop_assert!(f.latency() >= 0.0);
            }
        }

        #[test]
        fn sparse_arrivals_never_queue(t in trace(), b in 1e5f64..1e9) {
            // A period longer than any frame's total service empties every queue.
            let period = t
                .iter()
                .map(|r| r.enc_ms + r.bytes as f64 * 1000.0 / b + r.dec_ms)
                .fold(0.0, f64::max)
                + 1.0;
            let r = simulate(&t, b, period).unwrap();
            for (f, rec) in r.frames.iter().zip(&t) {
                let expect = rec.enc_ms + rec.bytes as f64 * 1000.0 / b + rec.dec_ms;
                prop_assert!((f.latency() - expect).abs() <= 1e-9 * expect.max(1.0));
            }
        }
    }
}
