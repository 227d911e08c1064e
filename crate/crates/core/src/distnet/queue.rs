use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Pending DATA_REQUESTs, served in arrival order. Simultaneous arrivals
/// are ordered by worker key.
#[derive(Debug, Clone, Default)]
pub struct RequestQueue {
    heap: BinaryHeap<Reverse<(u64, u64)>>,
}

impl RequestQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, worker: u64, timestamp: u64) {
        self.heap.push(Reverse((timestamp, worker)));
    }

    /// Removes and returns `(worker, timestamp)` of the earliest request.
    pub fn pop(&mut self) -> Option<(u64, u64)> {
        self.heap.pop().map(|Reverse((ts, w))| (w, ts))
    }

    pub fn remove_worker(&mut self, worker: u64) {
        self.heap.retain(|Reverse((_, w))| *w != worker);
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrival_order_then_key() {
        let mut q = RequestQueue::new();
        q.push(9, 30);
        q.push(5, 10);
        q.push(7, 20);
        q.push(3, 20);
        let order: Vec<u64> = std::iter::from_fn(|| q.pop().map(|(w, _)| w)).collect();
        assert_eq!(order, vec![5, 3, 7, 9]);
    }

    #[test]
    fn remove_worker_drops_its_requests() {
        let mut q = RequestQueue::new();
        q.push(1, 1);
        q.push(2, 2);
        q.remove_worker(1);
        assert_eq!(q.pop(), Some((2, 2)));
        assert!(q.is_empty());
    }
}
