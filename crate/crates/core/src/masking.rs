//! Span masks over text patches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::render::PatchSequence;

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("invalid mask spec: {0}")]
    InvalidSpec(String),
    #[error("cannot place {target} masked patches in {len} positions (placed {placed})")]
    Infeasible { target: usize, placed: usize, len: usize },
    #[error("mask length {mask} does not match sequence length {seq}")]
    LengthMismatch { mask: usize, seq: usize },
    #[error("mask covers unattended position {0}")]
    Unattended(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    /// Fraction of text patches to mask.
    pub ratio: f64,
    /// Longest run of consecutive masked patches.
    pub max_span: usize,
    /// Unmasked patches required between two spans.
    pub min_gap: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            ratio: 0.25,
            max_span: 6,
            min_gap: 1,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<(), MaskError> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(MaskError::InvalidSpec(format!("ratio {} outside [0, 1]", self.ratio)));
        }
        if self.max_span == 0 {
            return Err(MaskError::InvalidSpec("max_span must be >= 1".into()));
        }
        Ok(())
    }

    /// `⌊ratio · len⌋`, guarded against representation error just below an
    /// integer.
    pub fn target_count(&self, len: usize) -> usize {
        (self.ratio * len as f64 + 1e-9).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub bits: Vec<bool>,
    pub num_masked: usize,
}

impl Mask {
    pub fn none(len: usize) -> Self {
        Self {
            bits: vec![false; len],
            num_masked: 0,
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let num_masked = bits.iter().filter(|&&b| b).count();
        Self { bits, num_masked }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Pads with unmasked positions up to `len`.
    pub fn extended_to(mut self, len: usize) -> Self {
        if self.bits.len() < len {
            self.bits.resize(len, false);
        }
        self
    }

    /// Length of the longest run of masked positions.
    pub fn longest_run(&self) -> usize {
        let (mut best, mut cur) = (0, 0);
        for &b in &self.bits {
            cur = if b { cur + 1 } else { 0 };
            best = best.max(cur);
        }
        best
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

/// Masks exactly `⌊ratio · num_text_patches⌋` positions in spans.
///
/// Each span draws a length uniformly from `1..=max_span` (cut to the
/// remaining budget) and a start uniformly among positions where the span
/// fits, keeps `min_gap` unmasked patches to its neighbours, and does not
/// extend an adjacent run past `max_span`. When no start exists for the drawn
/// length, shorter lengths are tried before giving up.
pub fn generate_span_mask<R: Rng + ?Sized>(
    num_text_patches: usize,
    spec: &MaskSpec,
    rng: &mut R,
) -> Result<Mask, MaskError> {
    spec.validate()?;
    let len = num_text_patches;
    let target = spec.target_count(len);
    let mut bits = vec![false; len];
    let mut placed = 0;
    let mut starts = Vec::with_capacity(len);
    while placed < target {
        let drawn = rng.random_range(1..=spec.max_span).min(target - placed);
        let mut chosen = None;
        for span in (1..=drawn).rev() {
            eligible_starts(&bits, span, spec, &mut starts);
            if !starts.is_empty() {
                chosen = Some((starts[rng.random_range(0..starts.len())], span));
                break;
            }
        }
        let Some((start, span)) = chosen else {
            return Err(MaskError::Infeasible { target, placed, len });
        };
        bits[start..start + span].fill(true);
        placed += span;
    }
    Ok(Mask {
        bits,
        num_masked: placed,
    })
}

fn eligible_starts(bits: &[bool], span: usize, spec: &MaskSpec, out: &mut Vec<usize>) {
    out.clear();
    let n = bits.len();
    if span > n {
        return;
    }
    // prefix[i] = number of masked positions before i
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &b in bits {
        prefix.push(prefix.last().unwrap() + usize::from(b));
    }
    let masked_in = |lo: usize, hi: usize| prefix[hi] - prefix[lo];
    for s in 0..=n - span {
        let e = s + span;
        let lo = s.saturating_sub(spec.min_gap);
        let hi = (e + spec.min_gap).min(n);
        if masked_in(lo, hi) != 0 {
            continue;
        }
        if spec.min_gap == 0 {
            let left = bits[..s].iter().rev().take_while(|&&b| b).count();
            let right = bits[e..].iter().take_while(|&&b| b).count();
            if left + span + right > spec.max_span {
                continue;
            }
        }
        out.push(s);
    }
}

/// Span mask for a rendered sequence: text patches only, padded to the
/// sequence length.
pub fn mask_sequence<R: Rng + ?Sized>(seq: &PatchSequence, spec: &MaskSpec, rng: &mut R) -> Result<Mask, MaskError> {
    Ok(generate_span_mask(seq.num_text_patches(), spec, rng)?.extended_to(seq.num_patches()))
}

/// Splits the attended positions of `seq` into visible and masked indices,
/// both ascending.
pub fn apply_mask(seq: &PatchSequence, mask: &Mask) -> Result<(Vec<usize>, Vec<usize>), MaskError> {
    if mask.len() != seq.num_patches() {
        return Err(MaskError::LengthMismatch {
            mask: mask.len(),
            seq: seq.num_patches(),
        });
    }
    let mut visible = Vec::new();
    let mut masked = Vec::new();
    for (i, (&attend, &m)) in seq.attention_mask.iter().zip(&mask.bits).enumerate() {
        match (attend, m) {
            (true, false) => visible.push(i),
            (true, true) => masked.push(i),
            (false, true) => return Err(MaskError::Unattended(i)),
            (false, false) => {}
        }
    }
    Ok((visible, masked))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn seq_with(attended: usize, total: usize) -> PatchSequence {
        PatchSequence {
            patch_size: 8,
            pixels: vec![1.0; total * 64],
            attention_mask: (0..total).map(|i| i < attended).collect(),
            word_spans: vec![],
            source_text: String::new(),
            truncated_words: 0,
        }
    }

    #[test]
    fn default_sequence_count() {
        let m = generate_span_mask(529, &MaskSpec::default(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(m.num_masked, 132);
        assert_eq!(m.bits.iter().filter(|&&b| b).count(), 132);
        assert!(m.longest_run() <= 6);
    }

    #[test]
    fn zero_ratio_masks_nothing() {
        let spec = MaskSpec {
            ratio: 0.0,
            ..MaskSpec::default()
        };
        for n in [0, 1, 17, 529] {
            let m = generate_span_mask(n, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert_eq!(m, Mask::none(n));
        }
    }

    #[test]
    fn short_sequence_sweep() {
        let spec = MaskSpec::default();
        for seed in 0..10_000 {
            let m = generate_span_mask(24, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(m.num_masked, 6);
            assert!(m.longest_run() <= 6);
        }
    }

    #[test]
    fn infeasible_gap_is_reported() {
        let spec = MaskSpec {
            ratio: 0.9,
            max_span: 1,
            min_gap: 1,
        };
        let r = generate_span_mask(10, &spec, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(matches!(r, Err(MaskError::Infeasible { target: 9, .. })));
        let relaxed = MaskSpec { min_gap: 0, max_span: 9, ..spec };
        assert_eq!(generate_span_mask(10, &relaxed, &mut ChaCha8Rng::seed_from_u64(3)).unwrap().num_masked, 9);
    }

    #[test]
    fn invalid_specs() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let bad = MaskSpec { ratio: 1.5, ..MaskSpec::default() };
        assert!(matches!(generate_span_mask(5, &bad, &mut r), Err(MaskError::InvalidSpec(_))));
        let bad = MaskSpec { max_span: 0, ..MaskSpec::default() };
        assert!(matches!(generate_span_mask(5, &bad, &mut r), Err(MaskError::InvalidSpec(_))));
    }

    #[test]
    fn apply_mask_partitions() {
        let seq = seq_with(4, 4);
        let m = Mask::from_bits(vec![false, true, true, false]);
        assert_eq!(apply_mask(&seq, &m).unwrap(), (vec![0, 3], vec![1, 2]));
        let seq = seq_with(5, 8);
        assert_eq!(apply_mask(&seq, &Mask::none(8)).unwrap(), ((0..5).collect(), vec![]));
        assert!(matches!(apply_mask(&seq, &Mask::none(7)), Err(MaskError::LengthMismatch { .. })));
        let mut bits = vec![false; 8];
        bits[6] = true;
        assert!(matches!(apply_mask(&seq, &Mask::from_bits(bits)), Err(MaskError::Unattended(6))));
    }

    proptest! {
        #[test]
        fn mask_contract(n in 0usize..200, ratio in 0.0f64..0.5, max_span in 1usize..8, min_gap in 0usize..2, seed: u64) {
            let spec = MaskSpec { ratio, max_span, min_gap };
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            match generate_span_mask(n, &spec, &mut r1) {
                Ok(m) => {
                    prop_assert_eq!(m.len(), n);
                    prop_assert_eq!(m.num_masked, spec.target_count(n));
                    prop_assert!(m.longest_run() <= max_span);
                    prop_assert_eq!(Some(m), generate_span_mask(n, &spec, &mut r2).ok());
                }
                Err(e) => {
                    let infeasible = matches!(e, MaskError::Infeasible { .. });
                    prop_assert!(infeasible);
                }
            }
        }

        #[test]
        fn partition_property(text in 0usize..40, pad in 0usize..10, seed: u64) {
            let seq = seq_with(text + 1, text + 1 + pad);
            let m = mask_sequence(&seq, &MaskSpec::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(!m.bits[text]);
            let (vis, masked) = apply_mask(&seq, &m).unwrap();
            let mut all: Vec<usize> = vis.iter().chain(&masked).copied().collect();
            prop_assert!(vis.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(masked.windows(2).all(|w| w[0] < w[1]));
            all.sort_unstable();
            prop_assert_eq!(all, (0..=text).collect::<Vec<_>>());
        }
    }
}
