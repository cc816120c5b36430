//! Text to fixed-size grayscale patch sequences.
//!
//! Words are split on whitespace and laid out left to right. Inside a word,
//! characters are packed into the current patch while their combined advance
//! fits the patch width and at most `chars_per_patch` characters share it. A
//! new word always starts a fresh patch, so every word maps to a contiguous
//! span of whole patches. One all-black separator patch closes the text and
//! the remainder is white padding with attention 0.

mod font;
mod patchfile;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use font::{is_covered, BitmapFont, GlyphRasterizer, RasterizerRegistry, BITMAP_FONT_ID};
pub use patchfile::{read_patch_file, write_patch_file, PATCH_FILE_MAGIC, PATCH_FILE_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("max_patches = {0} leaves no room for text and separator")]
    Capacity(usize),
    #[error("word {index} is empty or contains whitespace")]
    EmptyWord { index: usize },
    #[error("unknown rasterizer `{0}`")]
    UnknownRasterizer(String),
    #[error("patch file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub patch_size: usize,
    pub max_patches: usize,
    pub chars_per_patch: usize,
    pub font_px: usize,
    pub rasterizer_id: String,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            max_patches: 529,
            chars_per_patch: 2,
            font_px: 16,
            rasterizer_id: BITMAP_FONT_ID.to_string(),
        }
    }
}

impl RenderConfig {
    pub fn with_max_patches(mut self, n: usize) -> Self {
        self.max_patches = n;
        self
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.max_patches < 2 {
            return Err(RenderError::Capacity(self.max_patches));
        }
        if self.patch_size < 8 {
            return Err(RenderError::InvalidConfig(format!("patch_size {} < 8", self.patch_size)));
        }
        if self.chars_per_patch == 0 {
            return Err(RenderError::InvalidConfig("chars_per_patch must be >= 1".into()));
        }
        if self.font_px == 0 {
            return Err(RenderError::InvalidConfig("font_px must be >= 1".into()));
        }
        Ok(())
    }
}

/// Rendered text: `num_patches` square grayscale patches with attention mask
/// and word alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub patch_size: usize,
    /// `[num_patches × patch_size × patch_size]`, 1.0 = white, 0.0 = ink.
    pub pixels: Vec<f32>,
    pub attention_mask: Vec<bool>,
    /// `(start, end_exclusive)` patch ranges, one per surviving word.
    pub word_spans: Vec<(usize, usize)>,
    pub source_text: String,
    /// Words dropped because they did not fit.
    pub truncated_words: usize,
}

impl PatchSequence {
    pub fn num_patches(&self) -> usize {
        self.attention_mask.len()
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let n = self.patch_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn patch_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.patch_len();
        &mut self.pixels[i * n..(i + 1) * n]
    }

    /// Number of attended patches (text + separator).
    pub fn attended_len(&self) -> usize {
        self.attention_mask.iter().take_while(|&&a| a).count()
    }

    /// Number of text patches, which is also the separator's index.
    pub fn num_text_patches(&self) -> usize {
        self.attended_len().saturating_sub(1)
    }

    pub fn num_words(&self) -> usize {
        self.word_spans.len()
    }
}

/// Renderer bound to one configuration and glyph backend.
#[derive(Clone)]
pub struct Renderer {
    config: RenderConfig,
    rasterizer: Arc<dyn GlyphRasterizer>,
}

impl std::fmt::Debug for Renderer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Renderer").field("config", &self.config).finish()
    }
}

impl Renderer {
    /// Resolves the config's rasterizer through the default registry.
    pub fn new(config: RenderConfig) -> Result<Self, RenderError> {
        Self::from_registry(config, &RasterizerRegistry::default())
    }

    pub fn from_registry(config: RenderConfig, registry: &RasterizerRegistry) -> Result<Self, RenderError> {
        config.validate()?;
        let rasterizer = registry.create(&config.rasterizer_id, config.font_px)?;
        Ok(Self { config, rasterizer })
    }

    pub fn with_rasterizer(config: RenderConfig, rasterizer: Arc<dyn GlyphRasterizer>) -> Result<Self, RenderError> {
        config.validate()?;
        Ok(Self { config, rasterizer })
    }

    pub fn config(&self) -> &RenderConfig {
        &self.config
    }

    /// Splits `word` into per-patch character runs.
    fn layout_word(&self, word: &str) -> Vec<String> {
        let mut runs = Vec::new();
        let mut cur = String::new();
        let (mut width, mut count) = (0usize, 0usize);
        for c in word.chars() {
            let mut buf = [0u8; 4];
            let adv = self.rasterizer.advance(c.encode_utf8(&mut buf));
            if count > 0 && (width + adv > self.config.patch_size || count == self.config.chars_per_patch) {
                runs.push(std::mem::take(&mut cur));
                width = 0;
                count = 0;
            }
            cur.push(c);
            width += adv;
            count += 1;
        }
        if !cur.is_empty() {
            runs.push(cur);
        }
        runs
    }

    fn render_runs<'a>(&self, words: impl Iterator<Item = &'a str>, source_text: String) -> PatchSequence {
        let cfg = &self.config;
        let capacity = cfg.max_patches - 1;
        let mut runs: Vec<String> = Vec::new();
        let mut spans = Vec::new();
        let mut truncated = 0;
        let mut full = false;
        for word in words {
            if full {
                truncated += 1;
                continue;
            }
            let word_runs = self.layout_word(word);
            if runs.len() + word_runs.len() > capacity {
                full = true;
                truncated += 1;
                continue;
            }
            let start = runs.len();
            runs.extend(word_runs);
            spans.push((start, runs.len()));
        }

        let p = cfg.patch_size;
        let plen = p * p;
        let n_text = runs.len();
        let mut pixels = vec![1.0f32; cfg.max_patches * plen];
        for (i, run) in runs.iter().enumerate() {
            let grid = self.rasterizer.rasterize(run, p, p);
            for (dst, src) in pixels[i * plen..(i + 1) * plen].iter_mut().zip(grid) {
                *dst = src.clamp(0.0, 1.0);
            }
        }
        pixels[n_text * plen..(n_text + 1) * plen].fill(0.0);
        let attention_mask = (0..cfg.max_patches).map(|i| i <= n_text).collect();
        PatchSequence {
            patch_size: p,
            pixels,
            attention_mask,
            word_spans: spans,
            source_text,
            truncated_words: truncated,
        }
    }

    /// Renders whitespace-separated text.
    pub fn render_text(&self, text: &str) -> PatchSequence {
        self.render_runs(text.split_whitespace(), text.to_string())
    }

    /// Renders pre-tokenized words with exact word-to-patch alignment.
    pub fn render_words<S: AsRef<str>>(&self, words: &[S]) -> Result<PatchSequence, RenderError> {
        for (index, w) in words.iter().enumerate() {
            let w = w.as_ref();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(RenderError::EmptyWord { index });
            }
        }
        let source = words.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
        Ok(self.render_runs(words.iter().map(AsRef::as_ref), source))
    }
}

/// One-shot rendering with the registry's backend for `config.rasterizer_id`.
pub fn render_text(text: &str, config: &RenderConfig) -> Result<PatchSequence, RenderError> {
    Ok(Renderer::new(config.clone())?.render_text(text))
}

pub fn render_words<S: AsRef<str>>(words: &[S], config: &RenderConfig) -> Result<PatchSequence, RenderError> {
    Renderer::new(config.clone())?.render_words(words)
}
