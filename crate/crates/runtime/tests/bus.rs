use std::sync::{Arc, Barrier};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smartpilot_core::live::AnomalyInsight;
use smartpilot_runtime::{Bus, Payload};

const TOPICS: usize = 10;
const SUBSCRIBERS: usize = 10;
const MESSAGES: u64 = 10_000;
const CAPACITY: usize = 64;

fn payload(i: u64) -> Payload {
    Payload::Insight(AnomalyInsight::from_classes(&[], 0.3, i as i64))
}

fn stamp(p: &Payload) -> i64 {
    match p {
        Payload::Insight(i) => i.timestamp,
        _ => unreachable!(),
    }
}

struct Seen {
    topic: usize,
    seqs: Vec<u64>,
    dropped: u64,
    max_pending: usize,
}

#[test]
fn fifo_and_drop_accounting_under_stress() {
    let bus = Bus::new(CAPACITY);
    let names: Vec<String> = (0..TOPICS).map(|t| format!("topic-{t}")).collect();
    let start = Arc::new(Barrier::new(TOPICS + TOPICS * SUBSCRIBERS));
    let mut subs = Vec::new();
    for (t, name) in names.iter().enumerate() {
        for k in 0..SUBSCRIBERS {
            let sub = bus.subscribe(name);
            let start = start.clone();
            // Mixed consumer speeds: some keep up, some stall now and then.
            let mut rng = ChaCha8Rng::seed_from_u64((t * SUBSCRIBERS + k) as u64);
            let stall = k % 3;
            subs.push(std::thread::spawn(move || {
                start.wait();
                let mut seen = Seen {
                    topic: t,
                    seqs: Vec::new(),
                    dropped: 0,
                    max_pending: 0,
                };
                while let Some(m) = sub.recv() {
                    assert_eq!(stamp(&m.payload) as u64, m.seq, "payload travels with its seq");
                    seen.seqs.push(m.seq);
                    seen.max_pending = seen.max_pending.max(sub.pending());
                    if stall > 0 && rng.random::<f64>() < 0.01 * stall as f64 {
                        std::thread::sleep(Duration::from_micros(200));
                    }
                }
                seen.dropped = sub.dropped();
                seen
            }));
        }
    }
    let pubs: Vec<_> = names
        .iter()
        .map(|name| {
            let (bus, name, start) = (bus.clone(), name.clone(), start.clone());
            std::thread::spawn(move || {
                start.wait();
                for i in 1..=MESSAGES {
                    assert_eq!(bus.publish(&name, payload(i)), Some(i));
                }
                bus.close(&name);
            })
        })
        .collect();
    for p in pubs {
        p.join().unwrap();
    }
    let mut per_topic_drops = vec![0u64; TOPICS];
    for s in subs {
        let s = s.join().unwrap();
        assert!(s.seqs.windows(2).all(|w| w[0] < w[1]), "per-topic FIFO");
        assert_eq!(s.seqs.len() as u64 + s.dropped, MESSAGES, "every message is delivered or counted");
        // Nothing is published after the newest CAPACITY messages, so none
        // of them can have been evicted.
        let tail: Vec<u64> = (MESSAGES - CAPACITY as u64 + 1..=MESSAGES).collect();
        assert_eq!(&s.seqs[s.seqs.len() - CAPACITY..], &tail[..]);
        assert!(s.max_pending <= CAPACITY);
        per_topic_drops[s.topic] += s.dropped;
    }
    for (t, name) in names.iter().enumerate() {
        assert_eq!(bus.dropped(name), per_topic_drops[t]);
        assert_eq!(bus.published(name), MESSAGES);
    }
    assert_eq!(bus.total_dropped(), per_topic_drops.iter().sum::<u64>());
}

/// Drop-oldest enumerated by hand: with room for `cap`, a subscriber that
/// never reads keeps the last `cap` of `n` messages and counts `n - cap`.
#[test]
fn drop_oldest_matches_hand_enumeration() {
    for cap in 1..=4 {
        for n in 0..=8u64 {
            let bus = Bus::new(cap);
            let s = bus.subscribe("t");
            for i in 1..=n {
                bus.publish("t", payload(i));
            }
            bus.close("t");
            let got: Vec<i64> = s.iter().map(|m| stamp(&m.payload)).collect();
            let keep = n.min(cap as u64);
            let expected: Vec<i64> = ((n - keep + 1)..=n).map(|i| i as i64).collect();
            assert_eq!(got, expected, "cap {cap} n {n}");
            assert_eq!(s.dropped(), n - keep);
        }
    }
}

#[test]
fn recv_timeout_returns_on_silence() {
    let bus = Bus::new(4);
    let s = bus.subscribe("quiet");
    assert!(s.recv_timeout(Duration::from_millis(20)).is_none());
    bus.publish("quiet", payload(1));
    assert_eq!(s.recv_timeout(Duration::from_millis(20)).unwrap().seq, 1);
}
