//! In-process publish/subscribe bus.
//!
//! Every subscription owns a bounded queue. A full queue drops its oldest
//! message and counts the drop, so a publisher never waits on a subscriber.
//! Sequence numbers are assigned and queues filled under one lock, which
//! makes every subscriber see each topic in seq order.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use smartpilot_core::foresight::ForecastResult;
use smartpilot_core::live::AnomalyInsight;
use smartpilot_core::predictx::PredictionResult;

use crate::tags::TagFrame;

pub const FRAMES: &str = "frames";
pub const PREDICTIONS: &str = "predictions";
pub const INSIGHTS: &str = "insights";
pub const FORECASTS: &str = "forecasts";

pub const DEFAULT_BUFFER: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Payload {
    Frame(TagFrame),
    Prediction(PredictionResult),
    Forecast(ForecastResult),
    Insight(AnomalyInsight),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub topic: String,
    pub payload: Payload,
    /// Starts at 1 on every topic.
    pub seq: u64,
    pub emitted_at: i64,
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

struct QueueState {
    items: VecDeque<Arc<AgentMessage>>,
    /// Subscribed topics not yet closed.
    open: usize,
}

struct Queue {
    capacity: usize,
    state: Mutex<QueueState>,
    ready: Condvar,
    dropped: AtomicU64,
}

impl Queue {
    /// Returns whether the oldest message was evicted.
    fn push(&self, m: Arc<AgentMessage>) -> bool {
        let mut s = self.state.lock().expect("queue lock");
        let evicted = if s.items.len() == self.capacity {
            s.items.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
            true
        } else {
            false
        };
        s.items.push_back(m);
        drop(s);
        self.ready.notify_one();
        evicted
    }

    fn close_one(&self) {
        let mut s = self.state.lock().expect("queue lock");
        s.open = s.open.saturating_sub(1);
        drop(s);
        self.ready.notify_all();
    }
}

#[derive(Default)]
struct Topic {
    last_seq: u64,
    closed: bool,
    dropped: u64,
    subscribers: Vec<Weak<Queue>>,
}

/// Cheap to clone; clones share the same topics.
#[derive(Clone)]
pub struct Bus {
    capacity: usize,
    topics: Arc<Mutex<BTreeMap<String, Topic>>>,
}

impl Bus {
    /// `capacity` is the per-subscription buffer, at least 1.
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            topics: Arc::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Publishes to every current subscriber of `topic` and returns the
    /// assigned seq. Publishing to a closed topic delivers nothing and
    /// returns `None`.
    ///
    /// # Panics
    /// On an empty topic name.
    pub fn publish(&self, topic: &str, payload: Payload) -> Option<u64> {
        assert!(!topic.is_empty(), "topic must be non-empty");
        let mut topics = self.topics.lock().expect("bus lock");
        let t = topics.entry(topic.to_string()).or_default();
        if t.closed {
            log::warn!("publish on closed topic '{topic}' ignored");
            return None;
        }
        t.last_seq += 1;
        let msg = Arc::new(AgentMessage {
            topic: topic.to_string(),
            payload,
            seq: t.last_seq,
            emitted_at: now_ms(),
        });
        let mut dropped = 0;
        t.subscribers.retain(|w| match w.upgrade() {
            Some(q) => {
                dropped += u64::from(q.push(msg.clone()));
                true
            }
            None => false,
        });
        t.dropped += dropped;
        Some(t.last_seq)
    }

    pub fn subscribe(&self, topic: &str) -> Subscription {
        self.subscribe_many(&[topic])
    }

    /// One queue fed by several topics. Order is preserved within each
    /// topic, not across them.
    ///
    /// # Panics
    /// On an empty topic name.
    pub fn subscribe_many(&self, topics: &[&str]) -> Subscription {
        let mut map = self.topics.lock().expect("bus lock");
        let mut open = 0;
        for t in topics {
            assert!(!t.is_empty(), "topic must be non-empty");
            open += usize::from(!map.get(*t).is_some_and(|t| t.closed));
        }
        let queue = Arc::new(Queue {
            capacity: self.capacity,
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                open,
            }),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
        });
        for t in topics {
            let entry = map.entry(t.to_string()).or_default();
            if !entry.closed {
                entry.subscribers.push(Arc::downgrade(&queue));
            }
        }
        Subscription { queue }
    }

    /// Marks the end of a topic. Subscribers drain what is queued, then see
    /// the end of the stream once all their topics are closed.
    pub fn close(&self, topic: &str) {
        let mut map = self.topics.lock().expect("bus lock");
        let t = map.entry(topic.to_string()).or_default();
        if t.closed {
            return;
        }
        t.closed = true;
        for q in t.subscribers.drain(..).filter_map(|w| w.upgrade()) {
            q.close_one();
        }
    }

    /// Messages evicted from `topic` subscriptions so far.
    pub fn dropped(&self, topic: &str) -> u64 {
        self.topics.lock().expect("bus lock").get(topic).map_or(0, |t| t.dropped)
    }

    pub fn total_dropped(&self) -> u64 {
        self.topics.lock().expect("bus lock").values().map(|t| t.dropped).sum()
    }

    /// Seq of the last message published on `topic`, 0 if none.
    pub fn published(&self, topic: &str) -> u64 {
        self.topics.lock().expect("bus lock").get(topic).map_or(0, |t| t.last_seq)
    }
}

impl Default for Bus {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER)
    }
}

pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    /// Blocks for the next message. `None` once every subscribed topic is
    /// closed and the queue is drained.
    pub fn recv(&self) -> Option<Arc<AgentMessage>> {
        let mut s = self.queue.state.lock().expect("queue lock");
        loop {
            if let Some(m) = s.items.pop_front() {
                return Some(m);
            }
            if s.open == 0 {
                return None;
            }
            s = self.queue.ready.wait(s).expect("queue lock");
        }
    }

    /// Like [`recv`](Self::recv) but gives up after `timeout`.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Arc<AgentMessage>> {
        let deadline = Instant::now() + timeout;
        let mut s = self.queue.state.lock().expect("queue lock");
        loop {
            if let Some(m) = s.items.pop_front() {
                return Some(m);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if s.open == 0 || left.is_zero() {
                return None;
            }
            s = self.queue.ready.wait_timeout(s, left).expect("queue lock").0;
        }
    }

    pub fn try_recv(&self) -> Option<Arc<AgentMessage>> {
        self.queue.state.lock().expect("queue lock").items.pop_front()
    }

    /// Messages evicted from this subscription.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }

    pub fn pending(&self) -> usize {
        self.queue.state.lock().expect("queue lock").items.len()
    }

    /// Iterates until the end of the stream.
    pub fn iter(&self) -> impl Iterator<Item = Arc<AgentMessage>> + '_ {
        std::iter::from_fn(|| self.recv())
    }
}
