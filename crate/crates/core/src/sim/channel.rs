//! The simulated network: fixed latency, seeded Bernoulli loss and explicit
//! drop lists.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::ChannelSpec;

/// What happened to one transmission.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fate {
    /// Index among all transmissions.
    pub index: u64,
    /// Index among two-phase-commit transmissions, if it was one.
    pub txn_index: Option<u64>,
    /// Delivery time, or `None` if dropped.
    pub deliver_at: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Channel {
    latency: f64,
    loss_rate: f64,
    drop_list: BTreeSet<u64>,
    txn_drop_list: BTreeSet<u64>,
    rng: ChaCha8Rng,
    sent: u64,
    txn_sent: u64,
}

impl Channel {
    pub fn new(spec: &ChannelSpec, seed: u64) -> Self {
        Self {
            latency: spec.latency,
            loss_rate: spec.loss_rate,
            drop_list: spec.drop_list.iter().copied().collect(),
            txn_drop_list: spec.txn_drop_list.iter().copied().collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            sent: 0,
            txn_sent: 0,
        }
    }

    /// Decides the fate of the next transmission. One loss draw is consumed
    /// per transmission whatever the outcome, so drop lists do not shift the
    /// random stream.
    pub fn transmit(&mut self, now: f64, is_txn: bool) -> Fate {
        let index = self.sent;
        self.sent += 1;
        let txn_index = is_txn.then(|| {
            self.txn_sent += 1;
            self.txn_sent - 1
        });
        let lost = self.rng.gen::<f64>() < self.loss_rate;
        let listed = self.drop_list.contains(&index) || txn_index.is_some_and(|i| self.txn_drop_list.contains(&i));
        Fate {
            index,
            txn_index,
            deliver_at: (!lost && !listed).then_some(now + self.latency),
        }
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_delivers_everything_after_latency() {
        let mut c = Channel::new(&ChannelSpec::default(), 1);
        for i in 0..1000 {
            let f = c.transmit(i as f64, i % 3 == 0);
            assert_eq!(f.deliver_at, Some(i as f64 + 0.02));
        }
    }

    #[test]
    fn drop_lists() {
        let spec = ChannelSpec {
            drop_list: vec![1],
            txn_drop_list: vec![0, 2],
            ..ChannelSpec::default()
        };
        let mut c = Channel::new(&spec, 1);
        let fates: Vec<bool> = [false, false, true, true, true]
            .iter()
            .map(|txn| c.transmit(0.0, *txn).deliver_at.is_some())
            .collect();
        assert_eq!(fates, vec![true, false, false, true, false]);
    }

    #[test]
    fn loss_rate_is_roughly_honoured_and_seeded() {
        let spec = ChannelSpec {
            loss_rate: 0.3,
            ..ChannelSpec::default()
        };
        let run = |seed| {
            let mut c = Channel::new(&spec, seed);
            (0..10_000).filter(|_| c.transmit(0.0, false).deliver_at.is_none()).count()
        };
        let lost = run(9);
        assert_eq!(lost, run(9));
        assert!((2700..3300).contains(&lost), "{lost}");
    }
}
