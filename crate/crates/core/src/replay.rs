//! Replay buffer of real transitions with episode structure.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, SimRng};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub episode_id: u64,
    pub step_in_episode: usize,
}

/// A real start state and the `H` actions actually taken from it.
#[derive(Clone, Debug, PartialEq)]
pub struct StateActionSequence {
    pub start: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    entries: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn sample_indices(&self, n: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
        if self.entries.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        let len = self.entries.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    /// `n` transitions uniformly with replacement.
    pub fn sample_batch(&self, n: usize, rng: &mut SimRng) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect())
    }

    /// True when entries `i..i+h` belong to one episode with consecutive steps.
    fn is_sequence_start(&self, i: usize, h: usize) -> bool {
        let Some(last) = self.entries.get(i + h - 1) else {
            return false;
        };
        let first = &self.entries[i];
        last.episode_id == first.episode_id && last.step_in_episode == first.step_in_episode + h - 1
    }

    /// `count` contiguous real action sequences of length `h`, each within one
    /// episode, with start positions uniform over all valid starts.
    pub fn sample_state_action_sequences(
        &self,
        count: usize,
        h: usize,
        rng: &mut SimRng,
    ) -> Result<Vec<StateActionSequence>> {
        if h == 0 {
            return Err(Error::Config("sequence horizon must be at least 1".into()));
        }
        let len = self.entries.len();
        if len < h {
            return Err(Error::NoEpisodeLongEnough { required: h });
        }
        let mut starts = Vec::with_capacity(count);
        let mut valid: Option<Vec<usize>> = None;
        for _ in 0..count {
            let mut picked = None;
            if valid.is_none() {
                // rejection sampling is exact and cheap while most starts are valid
                for _ in 0..64 {
                    let i = rng.random_range(0..len);
                    if self.is_sequence_start(i, h) {
                        picked = Some(i);
                        break;
                    }
                }
            }
            let i = match picked {
                Some(i) => i,
                None => {
                    let v = valid.get_or_insert_with(|| (0..len).filter(|&i| self.is_sequence_start(i, h)).collect());
                    if v.is_empty() {
                        return Err(Error::NoEpisodeLongEnough { required: h });
                    }
                    v[rng.random_range(0..v.len())]
                }
            };
            starts.push(i);
        }
        Ok(starts
            .into_iter()
            .map(|i| StateActionSequence {
                start: self.entries[i].s.clone(),
                actions: (i..i + h).map(|j| self.entries[j].a.clone()).collect(),
            })
            .collect())
    }

    /// `b` bootstrap resamples, each of exactly `len()` indices drawn uniformly
    /// with replacement.
    pub fn bootstrap_datasets(&self, b: usize, rng: &mut SimRng) -> Result<Vec<Vec<usize>>> {
        if self.entries.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        let n = self.entries.len();
        Ok((0..b)
            .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
            .collect())
    }
}

/// Seeded form of [`ReplayBuffer::bootstrap_datasets`].
pub fn bootstrap_datasets(buffer: &ReplayBuffer, b: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    buffer.bootstrap_datasets(b, &mut seeded(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn tr(ep: u64, step: usize, tag: f64) -> Transition {
        Transition {
            s: vec![tag],
            a: vec![tag + 0.5],
            r: tag,
            s_next: vec![tag + 1.0],
            episode_id: ep,
            step_in_episode: step,
        }
    }

    fn episodes(lens: &[usize]) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(10_000);
        let mut k = 0.0;
        for (ep, &n) in lens.iter().enumerate() {
            for s in 0..n {
                b.push(tr(ep as u64, s, k));
                k += 1.0;
            }
        }
        b
    }

    #[test]
    fn push_and_evict() {
        let mut b = ReplayBuffer::new(3);
        b.push(tr(0, 0, 0.0));
        assert_eq!(b.len(), 1);
        assert_eq!(b.get(0), &tr(0, 0, 0.0));
        for i in 1..4 {
            b.push(tr(0, i, i as f64));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).r, 1.0);
    }

    #[test]
    fn batch_sampling_edges() {
        let mut rng = seeded(0);
        assert!(ReplayBuffer::new(4).sample_batch(1, &mut rng).is_err());
        let b = episodes(&[1]);
        assert!(b.sample_batch(0, &mut rng).unwrap().is_empty());
        let five = b.sample_batch(5, &mut rng).unwrap();
        assert!(five.iter().all(|t| t == b.get(0)));
        let big = episodes(&[50]);
        assert_eq!(big.sample_batch(8, &mut seeded(3)).unwrap(), big.sample_batch(8, &mut seeded(3)).unwrap());
    }

    #[test]
    fn unique_full_sequence_is_forced() {
        let b = episodes(&[10]);
        let seqs = b.sample_state_action_sequences(4, 10, &mut seeded(1)).unwrap();
        for s in seqs {
            assert_eq!(s.start, vec![0.0]);
            assert_eq!(s.actions.len(), 10);
            assert_eq!(s.actions[9], vec![9.5]);
        }
    }

    #[test]
    fn too_short_episodes_name_the_horizon() {
        let b = episodes(&[3, 4, 2]);
        match b.sample_state_action_sequences(1, 5, &mut seeded(0)) {
            Err(Error::NoEpisodeLongEnough { required }) => assert_eq!(required, 5),
            other => panic!("{other:?}"),
        }
        // only the middle episode can host h = 4
        let s = b.sample_state_action_sequences(20, 4, &mut seeded(0)).unwrap();
        assert!(s.iter().all(|q| q.start == vec![3.0]));
    }

    #[test]
    fn horizon_one_returns_stored_pairs() {
        let b = episodes(&[4, 4]);
        for s in b.sample_state_action_sequences(30, 1, &mut seeded(2)).unwrap() {
            assert_eq!(s.actions[0][0], s.start[0] + 0.5);
        }
    }

    #[test]
    fn bootstrap_sizes_and_small_case() {
        let b = episodes(&[1]);
        assert_eq!(bootstrap_datasets(&b, 1, 0).unwrap(), vec![vec![0]]);
        let b = episodes(&[30, 20]);
        let sets = bootstrap_datasets(&b, 4, 7).unwrap();
        assert_eq!(sets.len(), 4);
        assert!(sets.iter().all(|s| s.len() == 50 && s.iter().all(|&i| i < 50)));
        assert_eq!(sets, bootstrap_datasets(&b, 4, 7).unwrap());
        assert!(bootstrap_datasets(&ReplayBuffer::new(2), 1, 0).is_err());
    }

    #[test]
    fn bootstrap_indices_look_uniform() {
        // chi-square over 20 cells, 19 dof: the 0.999 quantile is about 43.8
        let b = episodes(&[20]);
        let mut counts = [0usize; 20];
        for seed in 0..500 {
            for i in bootstrap_datasets(&b, 1, seed).unwrap().remove(0) {
                counts[i] += 1;
            }
        }
        let expected = 500.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 43.8, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn sequences_never_cross_episodes(
            lens in prop::collection::vec(1usize..15, 1..6),
            h in 1usize..6,
            seed in 0u64..500,
        ) {
            let b = episodes(&lens);
            match b.sample_state_action_sequences(10, h, &mut seeded(seed)) {
                Ok(seqs) => {
                    for s in seqs {
                        let i = b.iter().position(|t| t.s == s.start).unwrap();
                        let ep = b.get(i).episode_id;
                        for (k, a) in s.actions.iter().enumerate() {
                            prop_assert_eq!(b.get(i + k).episode_id, ep);
                            prop_assert_eq!(b.get(i + k).step_in_episode, b.get(i).step_in_episode + k);
                            prop_assert_eq!(a, &b.get(i + k).a);
                        }
                    }
                }
                Err(Error::NoEpisodeLongEnough { .. }) => prop_assert!(lens.iter().all(|&l| l < h)),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
