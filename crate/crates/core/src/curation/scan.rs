use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};

use super::{AdmissionBand, Probe, ProblemRecord, ProblemStatus};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub successes: usize,
    pub k: usize,
}

/// Append-only handoff from scanner to trainer. Readers keep their own cursor.
#[derive(Debug, Clone, Default)]
pub struct ScanQueue {
    items: Arc<Mutex<Vec<Candidate>>>,
}

impl ScanQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, c: Candidate) {
        self.items.lock().unwrap().push(c);
    }

    pub fn read_from(&self, cursor: usize) -> Vec<Candidate> {
        let items = self.items.lock().unwrap();
        items.get(cursor..).map(<[Candidate]>::to_vec).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.items.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn eligible(r: &ProblemRecord) -> bool {
    matches!(r.status, ProblemStatus::Untested | ProblemStatus::TooHard)
}

/// Re-probes pool-eligible problems with the checkpoint policy and returns
/// those it finds moderately hard, in snapshot order.
pub fn background_scan(
    snapshot: &[ProblemRecord],
    probe: &dyn Fn(&ProblemRecord) -> Probe,
    band: AdmissionBand,
) -> Vec<Candidate> {
    snapshot
        .iter()
        .filter(|r| eligible(r))
        .filter_map(|r| {
            let p = probe(r);
            band.admits(p.successes, p.k).then(|| Candidate {
                id: r.id.clone(),
                successes: p.successes,
                k: p.k,
            })
        })
        .collect()
}

/// Runs [`background_scan`] on its own thread, pushing each candidate as soon
/// as it is found. Returns the number pushed.
pub fn spawn_background_scan(
    snapshot: Vec<ProblemRecord>,
    probe: Arc<dyn Fn(&ProblemRecord) -> Probe + Send + Sync>,
    band: AdmissionBand,
    queue: ScanQueue,
) -> JoinHandle<usize> {
    thread::spawn(move || {
        let mut pushed = 0;
        for r in snapshot.iter().filter(|r| eligible(r)) {
            let p = probe(r);
            if band.admits(p.successes, p.k) {
                queue.push(Candidate {
                    id: r.id.clone(),
                    successes: p.successes,
                    k: p.k,
                });
                pushed += 1;
            }
        }
        pushed
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::{Curator, RefreshPolicy};
    use crate::seeds;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn fixed(successes: usize) -> impl Fn(&ProblemRecord) -> Probe {
        move |_| Probe { successes, k: 4 }
    }

    #[test]
    fn scan_admission() {
        let recs = vec![ProblemRecord::new("a", "", ""), ProblemRecord::new("b", "", "")];
        assert_eq!(background_scan(&recs, &fixed(2), AdmissionBand::Strict).len(), 2);
        assert!(background_scan(&recs, &fixed(0), AdmissionBand::Strict).is_empty());
        let mut active = recs.clone();
        active[0].status = ProblemStatus::Active;
        assert_eq!(background_scan(&active, &fixed(2), AdmissionBand::Strict).len(), 1);
    }

    #[test]
    fn threaded_scan_feeds_queue() {
        let recs: Vec<ProblemRecord> = (0..20).map(|i| ProblemRecord::new(format!("q{i}"), "", "")).collect();
        let queue = ScanQueue::new();
        let probe = Arc::new(|r: &ProblemRecord| Probe {
            successes: r.id.len() % 3,
            k: 4,
        });
        let n = spawn_background_scan(recs.clone(), probe.clone(), AdmissionBand::Strict, queue.clone())
            .join()
            .unwrap();
        let offline = background_scan(&recs, &*probe, AdmissionBand::Strict);
        assert_eq!(n, offline.len());
        assert_eq!(queue.read_from(0), offline);
    }

    proptest! {
        #[test]
        fn interleavings_conserve_problems(seed in 0u64..200) {
            let mut rng = seeds::rng(seed);
            let n = 30;
            let records: Vec<ProblemRecord> =
                (0..n).map(|i| ProblemRecord::new(format!("q{i}"), "", "")).collect();
            let mut cur = Curator::new(records, RefreshPolicy { refresh_step_interval: 3, ..Default::default() }).unwrap();
            // Only the first half is probed up front; the rest stays untested for the scanner.
            let half: BTreeMap<String, Probe> = (0..n / 2)
                .map(|i| (format!("q{i}"), Probe { successes: seeds::pick(&mut rng, 5), k: 4 }))
                .collect();
            cur.initial_filter(&half).unwrap();
            let queue = ScanQueue::new();
            for step in 1..=30 {
                match seeds::pick(&mut rng, 3) {
                    0 => {
                        let snap = cur.snapshot();
                        let s = seeds::pick(&mut rng, 5);
                        for c in background_scan(&snap, &fixed(s), AdmissionBand::Strict) {
                            queue.push(c);
                        }
                    }
                    1 => { cur.drain_scan_queue(&queue).unwrap(); }
                    _ => {
                        for id in cur.active().to_vec() {
                            cur.record_solve_rate(&id, seeds::uniform(&mut rng)).unwrap();
                        }
                        cur.record_batch_reward(seeds::uniform(&mut rng));
                        cur.maybe_refresh(step).unwrap();
                    }
                }
                prop_assert!(cur.is_consistent());
                prop_assert_eq!(cur.records().len(), n);
                prop_assert!(cur.active().len() <= cur.target_size());
            }
        }
    }
}
