use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DataError;

/// A sample tagged with the index of its language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedSample<T> {
    pub lang: usize,
    pub item: T,
}

/// Batches drawn from per-language pools, each sample at most once per
/// epoch.
///
/// In equal-share mode every batch holds `⌊B / L⌋` samples of each of the
/// `L` languages; the `B mod L` leftover slots go to consecutive languages
/// starting at a seeded offset. The batch is then shuffled. With a single
/// language the mixer degrades to plain shuffled batching, whose last batch
/// of an epoch may be short.
#[derive(Clone, Debug)]
pub struct BatchMixer<T> {
    langs: Vec<String>,
    pools: Vec<Vec<T>>,
    cursors: Vec<usize>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl<T: Clone> BatchMixer<T> {
    pub fn new(corpora: Vec<(String, Vec<T>)>, batch_size: usize, seed: u64) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::Config("batch size must be positive".into()));
        }
        if corpora.is_empty() || corpora.iter().any(|(_, v)| v.is_empty()) {
            return Err(DataError::Config("every language needs a non-empty corpus".into()));
        }
        if corpora.len() > 1 && batch_size < corpora.len() {
            return Err(DataError::Config(format!(
                "batch size {batch_size} is smaller than the {} languages",
                corpora.len()
            )));
        }
        let (langs, pools) = corpora.into_iter().unzip();
        let mut m = Self {
            langs,
            pools,
            cursors: Vec::new(),
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        m.new_epoch();
        Ok(m)
    }

    pub fn languages(&self) -> &[String] {
        &self.langs
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn plain(&self) -> bool {
        self.pools.len() == 1
    }

    /// Reshuffles every pool and rewinds it.
    pub fn new_epoch(&mut self) {
        for pool in &mut self.pools {
            pool.shuffle(&mut self.rng);
        }
        self.cursors = vec![0; self.pools.len()];
    }

    /// Samples per language in the next batch.
    fn quotas(&mut self) -> Vec<usize> {
        let l = self.pools.len();
        let mut q = vec![self.batch_size / l; l];
        let rem = self.batch_size % l;
        if rem > 0 {
            let offset = self.rng.random_range(0..l);
            for i in 0..rem {
                q[(offset + i) % l] += 1;
            }
        }
        q
    }

    /// Next batch of the current epoch.
    pub fn next_batch(&mut self) -> Result<Vec<MixedSample<T>>, DataError> {
        if self.plain() {
            let left = self.pools[0].len() - self.cursors[0];
            if left == 0 {
                return Err(DataError::ExhaustedCorpus {
                    lang: self.langs[0].clone(),
                });
            }
            let take = left.min(self.batch_size);
            let start = self.cursors[0];
            self.cursors[0] += take;
            return Ok(self.pools[0][start..start + take]
                .iter()
                .map(|item| MixedSample {
                    lang: 0,
                    item: item.clone(),
                })
                .collect());
        }
        let quotas = self.quotas();
        for (lang, &q) in quotas.iter().enumerate() {
            if self.cursors[lang] + q > self.pools[lang].len() {
                return Err(DataError::ExhaustedCorpus {
                    lang: self.langs[lang].clone(),
                });
            }
        }
        let mut batch = Vec::with_capacity(self.batch_size);
        for (lang, &q) in quotas.iter().enumerate() {
            let start = self.cursors[lang];
            batch.extend(self.pools[lang][start..start + q].iter().map(|item| MixedSample {
                lang,
                item: item.clone(),
            }));
            self.cursors[lang] += q;
        }
        batch.shuffle(&mut self.rng);
        Ok(batch)
    }

    /// Always-full batch for open-ended training: a language whose pool runs
    /// out is reshuffled and rewound on its own, even in the middle of a
    /// batch, so pools smaller than their share still work.
    pub fn next_batch_cycling(&mut self) -> Vec<MixedSample<T>> {
        let quotas = if self.plain() {
            vec![self.batch_size]
        } else {
            self.quotas()
        };
        let mut batch = Vec::with_capacity(self.batch_size);
        for (lang, &q) in quotas.iter().enumerate() {
            for _ in 0..q {
                if self.cursors[lang] == self.pools[lang].len() {
                    self.pools[lang].shuffle(&mut self.rng);
                    self.cursors[lang] = 0;
                }
                batch.push(MixedSample {
                    lang,
                    item: self.pools[lang][self.cursors[lang]].clone(),
                });
                self.cursors[lang] += 1;
            }
        }
        if !self.plain() {
            batch.shuffle(&mut self.rng);
        }
        batch
    }
}

/// Yields the batches of the current epoch.
impl<T: Clone> Iterator for BatchMixer<T> {
    type Item = Vec<MixedSample<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_batch().ok()
    }
}
