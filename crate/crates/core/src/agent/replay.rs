//! Replay storage: a never-evicted demonstration memory alongside a FIFO
//! ring buffer of online experience.

use rand::Rng;

use crate::query::{ActionVec, StateTokens};

/// One experience tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: StateTokens,
    pub action: ActionVec,
    pub reward: f64,
    /// Ignored by targets when `terminal` is set.
    pub next_state: StateTokens,
    pub terminal: bool,
    pub is_demo: bool,
}

#[derive(Clone, Debug, Default)]
struct RingBuffer {
    buf: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl RingBuffer {
    fn new(capacity: usize) -> Self {
        RingBuffer {
            buf: Vec::with_capacity(capacity.min(4096)),
            capacity,
            next: 0,
        }
    }

    fn push(&mut self, tr: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(tr);
        } else {
            self.buf[self.next] = tr;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    fn len(&self) -> usize {
        self.buf.len()
    }
}

/// Demonstration and online memories behind one sampling interface.
#[derive(Clone, Debug)]
pub struct ReplayMemories {
    demo: Vec<Transition>,
    online: RingBuffer,
}

impl ReplayMemories {
    pub fn new(online_capacity: usize) -> Self {
        ReplayMemories {
            demo: Vec::new(),
            online: RingBuffer::new(online_capacity),
        }
    }

    /// Demonstrations are append-only and never evicted.
    pub fn import_demos(&mut self, transitions: impl IntoIterator<Item = Transition>) -> usize {
        let before = self.demo.len();
        for mut tr in transitions {
            tr.is_demo = true;
            self.demo.push(tr);
        }
        self.demo.len() - before
    }

    pub fn push_online(&mut self, mut tr: Transition) {
        tr.is_demo = false;
        self.online.push(tr);
    }

    pub fn demo_len(&self) -> usize {
        self.demo.len()
    }

    pub fn online_len(&self) -> usize {
        self.online.len()
    }

    pub fn total_len(&self) -> usize {
        self.demo.len() + self.online.len()
    }

    pub fn demos(&self) -> &[Transition] {
        &self.demo
    }

    pub fn online_contains(&self, tr: &Transition) -> bool {
        self.online.buf.iter().any(|t| t == tr)
    }

    /// Sample a batch of `n_demo` demonstration and `n_online` online
    /// transitions, uniformly with replacement from each memory.
    pub fn sample<'a>(
        &'a self,
        n_demo: usize,
        n_online: usize,
        rng: &mut impl Rng,
    ) -> Vec<&'a Transition> {
        let mut batch = Vec::with_capacity(n_demo + n_online);
        for _ in 0..n_demo {
            batch.push(&self.demo[rng.gen_range(0..self.demo.len())]);
        }
        for _ in 0..n_online {
            batch.push(&self.online.buf[rng.gen_range(0..self.online.len())]);
        }
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{ActionVec, StateTokens};

    fn tr(tag: u32) -> Transition {
        Transition {
            state: StateTokens::terminal(4),
            action: ActionVec::new(vec![tag as u8, 0, 0]),
            reward: -(tag as f64),
            next_state: StateTokens::terminal(4),
            terminal: false,
            is_demo: false,
        }
    }

    #[test]
    fn fifo_eviction_keeps_newest() {
        let mut mem = ReplayMemories::new(4);
        for i in 1..=6 {
            mem.push_online(tr(i));
        }
        assert_eq!(mem.online_len(), 4);
        for i in 3..=6 {
            assert!(mem.online_contains(&tr(i)), "transition {i} missing");
        }
        assert!(!mem.online_contains(&tr(1)));
        assert!(!mem.online_contains(&tr(2)));
    }

    #[test]
    fn demos_are_flagged_and_kept() {
        let mut mem = ReplayMemories::new(2);
        let n = mem.import_demos(vec![tr(1), tr(2), tr(3)]);
        assert_eq!(n, 3);
        assert_eq!(mem.demo_len(), 3);
        assert!(mem.demos().iter().all(|t| t.is_demo));
        // online churn never touches demos
        for i in 0..10 {
            mem.push_online(tr(i + 10));
        }
        assert_eq!(mem.demo_len(), 3);
        assert_eq!(mem.online_len(), 2);
    }
}
