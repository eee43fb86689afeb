//! Event-queue model of the encoder -> link -> decoder pipeline, written
//! independently of the closed-form recurrence in `streamsim`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use lean3d::streamsim::TraceRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Arrive(usize),
    Done(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    stage: usize,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Per frame and stage: (start, finish). Stages are 0 = encode, 1 = link,
/// 2 = decode.
pub fn des_simulate(trace: &[TraceRecord], bandwidth: f64, period: f64) -> Vec<[(f64, f64); 3]> {
    let service = |stage: usize, i: usize| match stage {
        0 => trace[i].enc_ms,
        1 => trace[i].bytes as f64 * 1000.0 / bandwidth,
        _ => trace[i].dec_ms,
    };
    let mut out = vec![[(0.0, 0.0); 3]; trace.len()];
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let mut push = |heap: &mut BinaryHeap<Event>, time, stage, kind| {
        heap.push(Event {
            time,
            seq,
            stage,
            kind,
        });
        seq += 1;
    };
    for i in 0..trace.len() {
        push(&mut heap, i as f64 * period, 0, Kind::Arrive(i));
    }
    let mut queues: [VecDeque<usize>; 3] = Default::default();
    let mut busy = [false; 3];
    while let Some(ev) = heap.pop() {
        let s = ev.stage;
        match ev.kind {
            Kind::Arrive(i) => queues[s].push_back(i),
            Kind::Done(i) => {
                busy[s] = false;
                out[i][s].1 = ev.time;
                if s < 2 {
                    push(&mut heap, ev.time, s + 1, Kind::Arrive(i));
                }
            }
        }
        if !busy[s] {
            if let Some(i) = queues[s].pop_front() {
                busy[s] = true;
                out[i][s].0 = ev.time;
                push(&mut heap, ev.time + service(s, i), s, Kind::Done(i));
            }
        }
    }
    out
}
