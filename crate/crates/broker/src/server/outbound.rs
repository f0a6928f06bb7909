//! Per-connection outbound queue.
//!
//! Acknowledgments and forwarded publishes share one FIFO so a client sees
//! them in the order the broker produced them. Only forwarded publishes
//! count against the capacity; when it is reached the oldest queued delivery
//! is dropped. Acknowledgments are never dropped.

use std::collections::VecDeque;
use std::sync::Arc;

use parking_lot::{Condvar, Mutex};

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    pub frame: Arc<[u8]>,
    pub delivery: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Push {
    Queued,
    /// Queued after evicting the oldest delivery.
    QueuedWithDrop,
    Closed,
}

#[derive(Debug, Default)]
struct State {
    entries: VecDeque<Entry>,
    deliveries: usize,
    closed: bool,
}

#[derive(Debug)]
pub(crate) struct Outbound {
    state: Mutex<State>,
    ready: Condvar,
    capacity: usize,
}

impl Outbound {
    pub fn new(capacity: usize) -> Self {
        Outbound { state: Mutex::new(State::default()), ready: Condvar::new(), capacity: capacity.max(1) }
    }

    pub fn push_control(&self, frame: Arc<[u8]>) -> Push {
        let mut state = self.state.lock();
        if state.closed {
            return Push::Closed;
        }
        state.entries.push_back(Entry { frame, delivery: false });
        self.ready.notify_one();
        Push::Queued
    }

    pub fn push_delivery(&self, frame: Arc<[u8]>) -> Push {
        let mut state = self.state.lock();
        if state.closed {
            return Push::Closed;
        }
        let mut result = Push::Queued;
        if state.deliveries >= self.capacity {
            let oldest = state.entries.iter().position(|e| e.delivery).expect("delivery count is accurate");
            state.entries.remove(oldest);
            state.deliveries -= 1;
            result = Push::QueuedWithDrop;
        }
        state.entries.push_back(Entry { frame, delivery: true });
        state.deliveries += 1;
        self.ready.notify_one();
        result
    }

    /// Stops accepting entries. Already queued entries are still handed out.
    pub fn close(&self) {
        self.state.lock().closed = true;
        self.ready.notify_all();
    }

    /// Blocks until entries are available and moves all of them into `out`.
    /// Returns `false` once the queue is closed and drained.
    pub fn pop_all(&self, out: &mut Vec<Entry>) -> bool {
        let mut state = self.state.lock();
        while state.entries.is_empty() {
            if state.closed {
                return false;
            }
            self.ready.wait(&mut state);
        }
        out.extend(state.entries.drain(..));
        state.deliveries = 0;
        true
    }

    #[cfg(test)]
    fn len(&self) -> usize {
        self.state.lock().entries.len()
    }
}
