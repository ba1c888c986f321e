//! Deterministic toy text-to-image generator with explicit cross-attention.
//!
//! Each generation step computes a cross-attention map from latent cells
//! (queries: positional + step encodings) to prompt tokens (keys: token
//! embeddings). A pixel is the attention-weighted mix of per-token
//! signatures, averaged over steps and clamped to `[0, 1]`.
//!
//! A token's signature is the back-projection of its embedding through the
//! same fixed projection that [`image_embedding`] uses, offset to mid-grey.
//! That shared projection is what makes image and prompt embeddings live in
//! one space, so cosine similarity between them behaves like a CLIP score.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::edit::{self, ControllerMode, EditController};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, normalize, seeded_rng, softmax, Matrix};
use crate::prompt::Prompt;

/// Side length of the pixel blocks averaged by the image encoder.
pub const ENCODER_BLOCK: usize = 4;
const ENCODER_SEED: u64 = 0xC11F_0E4C;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Number of generation steps (one attention map per step).
    pub steps: usize,
    pub dim: usize,
    pub seed: u64,
    /// Multiplier on the attention logits (an inverse temperature).
    pub temperature: f64,
    /// Pixels per latent cell side; attention rows are latent cells.
    pub latent_factor: usize,
    /// Amplitude of token signatures around mid-grey.
    pub signature_amplitude: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            channels: 3,
            steps: 10,
            dim: 16,
            seed: 7,
            temperature: 2.0,
            latent_factor: 4,
            signature_amplitude: 3.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return bad("image dimensions must be positive");
        }
        if self.steps == 0 || self.dim == 0 {
            return bad("steps and dim must be positive");
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be positive");
        }
        if self.latent_factor == 0
            || !self.height.is_multiple_of(self.latent_factor)
            || !self.width.is_multiple_of(self.latent_factor)
        {
            return bad("latent_factor must divide height and width");
        }
        if encoder_features(self.height, self.width, self.channels) <= self.dim {
            return bad("image too small for the embedding dimension");
        }
        Ok(())
    }

    pub fn latent_height(&self) -> usize {
        self.height / self.latent_factor
    }

    pub fn latent_width(&self) -> usize {
        self.width / self.latent_factor
    }

    pub fn cells(&self) -> usize {
        self.latent_height() * self.latent_width()
    }
}

/// `H x W x C` image with values in `[0, 1]`, row-major, channel-last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyImage {
    #[serde(rename = "h")]
    pub height: usize,
    #[serde(rename = "w")]
    pub width: usize,
    #[serde(rename = "c")]
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ToyImage {
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimError(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::DimError("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ToyImage) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }

    /// 8-bit quantization used by PNG output.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.height * self.width * 3);
        for px in self.data.chunks(self.channels) {
            for c in 0..3 {
                let v = px[c.min(self.channels - 1)];
                out.push((255.0 * v).round() as u8);
            }
        }
        out
    }
}

/// One row-stochastic `cells x tokens` map per generation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStack {
    pub grid_height: usize,
    pub grid_width: usize,
    pub maps: Vec<Matrix>,
}

impl AttentionStack {
    pub fn steps(&self) -> usize {
        self.maps.len()
    }

    pub fn cells(&self) -> usize {
        self.grid_height * self.grid_width
    }

    pub fn tokens(&self) -> usize {
        self.maps.first().map_or(0, Matrix::cols)
    }

    /// Step-averaged map, `cells x tokens`.
    pub fn mean_map(&self) -> Matrix {
        let mut mean = Matrix::zeros(self.cells(), self.tokens());
        let inv = 1.0 / self.steps() as f64;
        for m in &self.maps {
            for (acc, v) in mean.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *acc += v;
            }
        }
        for v in mean.as_mut_slice() {
            *v *= inv;
        }
        mean
    }

    /// Per-token heatmaps (step-averaged column per token), for display.
    pub fn token_heatmaps(&self) -> Vec<Vec<f64>> {
        let mean = self.mean_map();
        (0..mean.cols()).map(|j| mean.column(j)).collect()
    }

    /// Mean attention mass each token receives across steps and cells.
    pub fn token_mass(&self) -> Vec<f64> {
        self.token_heatmaps()
            .iter()
            .map(|col| col.iter().sum::<f64>() / col.len() as f64)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("attention stacks always serialize")
    }
}

/// Per-token signatures over the encoder block grid (`tokens x features`).
#[derive(Debug, Clone)]
pub struct Signatures(Vec<Vec<f64>>);

impl Signatures {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn encoder_grid(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(ENCODER_BLOCK), width.div_ceil(ENCODER_BLOCK))
}

fn encoder_features(height: usize, width: usize, channels: usize) -> usize {
    let (bh, bw) = encoder_grid(height, width);
    bh * bw * channels
}

/// Fixed `dim x features` projection with orthonormal rows, each orthogonal
/// to the all-ones vector (so a uniform grey image projects to zero).
#[derive(Debug)]
struct Projection {
    features: usize,
    rows: Vec<Vec<f64>>,
}

impl Projection {
    fn build(dim: usize, features: usize) -> Self {
        let mut rng = seeded_rng(ENCODER_SEED, (features as u64) << 16 | dim as u64);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
        let ones_norm = (features as f64).sqrt();
        while rows.len() < dim {
            let mut v: Vec<f64> = (0..features)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            // Gram-Schmidt against the constant direction and earlier rows.
            let mean = v.iter().sum::<f64>() / ones_norm;
            for x in v.iter_mut() {
                *x -= mean / ones_norm;
            }
            for r in &rows {
                let p = dot(&v, r);
                for (x, rv) in v.iter_mut().zip(r) {
                    *x -= p * rv;
                }
            }
            if normalize(&mut v) {
                rows.push(v);
            }
        }
        Self { features, rows }
    }

    fn apply(&self, features: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, features)).collect()
    }

    fn back_project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.features];
        for (r, &coef) in self.rows.iter().zip(v) {
            for (o, rv) in out.iter_mut().zip(r) {
                *o += coef * rv;
            }
        }
        out
    }
}

type ProjectionCache = Mutex<HashMap<(usize, usize), Arc<Projection>>>;

fn projection(dim: usize, features: usize) -> Arc<Projection> {
    static CACHE: OnceLock<ProjectionCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().expect("projection cache poisoned");
    guard
        .entry((dim, features))
        .or_insert_with(|| Arc::new(Projection::build(dim, features)))
        .clone()
}

fn block_features(img: &ToyImage) -> Vec<f64> {
    let (bh, bw) = encoder_grid(img.height, img.width);
    let c = img.channels;
    let mut sums = vec![0.0; bh * bw * c];
    let mut counts = vec![0usize; bh * bw];
    for y in 0..img.height {
        for x in 0..img.width {
            let b = (y / ENCODER_BLOCK) * bw + x / ENCODER_BLOCK;
            counts[b] += 1;
            for ch in 0..c {
                sums[b * c + ch] += img.get(y, x, ch);
            }
        }
    }
    for (b, &n) in counts.iter().enumerate() {
        for ch in 0..c {
            sums[b * c + ch] /= n as f64;
        }
    }
    sums
}

/// Unit-norm image embedding: fixed projection of 4x4 block-averaged channels.
pub fn image_embedding(img: &ToyImage, dim: usize) -> Result<Vec<f64>> {
    let features = encoder_features(img.height, img.width, img.channels);
    if features <= dim {
        return Err(Error::DimError(format!(
            "{features} block features cannot span {dim} dimensions"
        )));
    }
    let blocks = block_features(img);
    let mut v = projection(dim, features).apply(&blocks);
    // A flat image projects to rounding noise, not to a direction.
    if norm(&v) <= 1e-12 * norm(&blocks) || !normalize(&mut v) {
        return Err(Error::DegenerateEmbedding("image projects to zero"));
    }
    Ok(v)
}

/// Generator with its positional and step encodings precomputed.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    positional: Vec<Vec<f64>>,
    step_codes: Vec<Vec<f64>>,
    projection: Arc<Projection>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.seed, 0x9E0);
        let d = cfg.dim;
        let sign = |rng: &mut rand_chacha::ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let freq_y: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..1.2) * sign(&mut rng)).collect();
        let freq_x: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..1.2) * sign(&mut rng)).collect();
        let phase: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let step_freq: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..0.6)).collect();
        let step_phase: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();

        // Cell centers measured in encoder blocks so the layout does not
        // depend on the latent factor.
        let scale = cfg.latent_factor as f64 / ENCODER_BLOCK as f64;
        let mut positional = Vec::with_capacity(cfg.cells());
        for ly in 0..cfg.latent_height() {
            for lx in 0..cfg.latent_width() {
                let (py, px) = (ly as f64 * scale, lx as f64 * scale);
                positional.push(
                    (0..d)
                        .map(|k| (freq_y[k] * py + freq_x[k] * px + phase[k]).sin())
                        .collect(),
                );
            }
        }
        let step_codes = (0..cfg.steps)
            .map(|t| {
                (0..d)
                    .map(|k| 0.5 * (t as f64 * step_freq[k] + step_phase[k]).sin())
                    .collect()
            })
            .collect();
        let projection = projection(d, encoder_features(cfg.height, cfg.width, cfg.channels));
        Ok(Self {
            cfg,
            positional,
            step_codes,
            projection,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    fn check_prompt(&self, p: &Prompt) -> Result<()> {
        if p.dim() != self.cfg.dim {
            return Err(Error::DimError(format!(
                "prompt embeddings have dim {} but the generator expects {}",
                p.dim(),
                self.cfg.dim
            )));
        }
        Ok(())
    }

    pub fn signatures(&self, p: &Prompt) -> Signatures {
        let amp = self.cfg.signature_amplitude;
        Signatures(
            p.tokens()
                .iter()
                .map(|t| {
                    self.projection
                        .back_project(&t.embedding)
                        .into_iter()
                        .map(|v| 0.5 + amp * v)
                        .collect()
                })
                .collect(),
        )
    }

    /// Attention maps for `p` with prompt weights applied.
    pub fn fresh_stack(&self, p: &Prompt) -> Result<AttentionStack> {
        self.check_prompt(p)?;
        let n = p.len();
        let scale = self.cfg.temperature / (self.cfg.dim as f64).sqrt();
        let weights = p.weights();
        let renormalize = weights.iter().all(|&w| w >= 0.0);
        let mut maps = Vec::with_capacity(self.cfg.steps);
        let mut query = vec![0.0; self.cfg.dim];
        for step in &self.step_codes {
            let mut m = Matrix::zeros(self.cfg.cells(), n);
            for (cell, pos) in self.positional.iter().enumerate() {
                for (q, (a, b)) in query.iter_mut().zip(pos.iter().zip(step)) {
                    *q = a + b;
                }
                let logits: Vec<f64> = p
                    .tokens()
                    .iter()
                    .map(|t| scale * dot(&query, &t.embedding))
                    .collect();
                let row = m.row_mut(cell);
                row.copy_from_slice(&softmax(&logits));
                for (v, w) in row.iter_mut().zip(weights) {
                    *v *= w;
                }
                if renormalize {
                    let s: f64 = row.iter().sum();
                    if s > 0.0 {
                        for v in row.iter_mut() {
                            *v /= s;
                        }
                    }
                }
            }
            maps.push(m);
        }
        Ok(AttentionStack {
            grid_height: self.cfg.latent_height(),
            grid_width: self.cfg.latent_width(),
            maps,
        })
    }

    fn check_stack(&self, stack: &AttentionStack, tokens: usize) -> Result<()> {
        if stack.steps() != self.cfg.steps
            || stack.grid_height != self.cfg.latent_height()
            || stack.grid_width != self.cfg.latent_width()
            || stack.maps.iter().any(|m| m.shape() != (self.cfg.cells(), tokens))
        {
            return Err(Error::DimError(format!(
                "attention stack does not fit {} steps x {} cells x {tokens} tokens",
                self.cfg.steps,
                self.cfg.cells()
            )));
        }
        Ok(())
    }

    /// Mixes signatures under `stack` without the final clamp.
    pub fn mix_unclamped(&self, stack: &AttentionStack, sigs: &Signatures) -> Result<Vec<f64>> {
        self.check_stack(stack, sigs.len())?;
        let cfg = &self.cfg;
        let (c, f) = (cfg.channels, cfg.latent_factor);
        let (_, bw) = encoder_grid(cfg.height, cfg.width);
        let mean = stack.mean_map();
        let mut out = vec![0.0; cfg.height * cfg.width * c];
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let cell = (y / f) * cfg.latent_width() + x / f;
                let block = (y / ENCODER_BLOCK) * bw + x / ENCODER_BLOCK;
                let attn = mean.row(cell);
                let px = &mut out[(y * cfg.width + x) * c..(y * cfg.width + x + 1) * c];
                for (a, sig) in attn.iter().zip(&sigs.0) {
                    for (ch, v) in px.iter_mut().enumerate() {
                        *v += a * sig[block * c + ch];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn render(&self, stack: &AttentionStack, sigs: &Signatures) -> Result<ToyImage> {
        let mut data = self.mix_unclamped(stack, sigs)?;
        for v in data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(ToyImage {
            height: self.cfg.height,
            width: self.cfg.width,
            channels: self.cfg.channels,
            data,
        })
    }

    pub fn generate(&self, p: &Prompt) -> Result<(ToyImage, AttentionStack)> {
        let stack = self.fresh_stack(p)?;
        let img = self.render(&stack, &self.signatures(p))?;
        Ok((img, stack))
    }

    /// Regenerates `p_new`, replacing each fresh map by the controller's edit.
    pub fn regenerate_with_controller(
        &self,
        p_new: &Prompt,
        source: &AttentionStack,
        ctrl: &EditController,
    ) -> Result<(ToyImage, AttentionStack)> {
        let fresh = self.fresh_stack(p_new)?;
        let stack = self.apply_controller(p_new, source, &fresh, ctrl)?;
        let img = self.render(&stack, &self.signatures(p_new))?;
        Ok((img, stack))
    }

    /// The edited stack for a precomputed fresh stack (no rendering).
    pub fn apply_controller(
        &self,
        p_new: &Prompt,
        source: &AttentionStack,
        fresh: &AttentionStack,
        ctrl: &EditController,
    ) -> Result<AttentionStack> {
        let n_new = p_new.len();
        self.check_stack(fresh, n_new)
            .map_err(|e| Error::ControllerMismatch(e.to_string()))?;
        if source.steps() != fresh.steps() || source.cells() != fresh.cells() {
            return Err(Error::ControllerMismatch(
                "source stack has a different step count or grid".into(),
            ));
        }
        if ctrl.tau_inj > self.cfg.steps {
            return Err(Error::ControllerMismatch(format!(
                "tau_inj {} exceeds {} generation steps",
                ctrl.tau_inj, self.cfg.steps
            )));
        }
        let n_old = source.tokens();
        let mismatch = |what: String| Err(Error::ControllerMismatch(what));
        let mut maps = Vec::with_capacity(fresh.steps());
        match &ctrl.mode {
            ControllerMode::WordSwap => {
                if n_old != n_new {
                    return mismatch(format!("word swap over {n_old} -> {n_new} tokens"));
                }
                if let Some(inj) = &ctrl.injected {
                    if inj.len() != ctrl.tau_inj || inj.iter().any(|m| m.shape() != (fresh.cells(), n_new)) {
                        return mismatch("injected maps do not cover tau_inj steps".into());
                    }
                }
                for (t, m) in fresh.maps.iter().enumerate() {
                    let injected = match &ctrl.injected {
                        Some(inj) if t < inj.len() => &inj[t],
                        _ => &source.maps[t],
                    };
                    maps.push(edit::edit_word_swap(m, injected, t, ctrl.tau_inj)?);
                }
            }
            ControllerMode::AddPhrase { alignment } => {
                if alignment.rows() != n_new || alignment.old_len() != n_old {
                    return mismatch(format!(
                        "alignment is {}x{} but prompts have {n_new} and {n_old} tokens",
                        alignment.rows(),
                        alignment.old_len()
                    ));
                }
                for (t, m) in fresh.maps.iter().enumerate() {
                    if t < ctrl.tau_inj {
                        maps.push(edit::route_columns(&source.maps[t], m, alignment)?);
                    } else {
                        maps.push(m.clone());
                    }
                }
            }
            ControllerMode::Reweight {
                column,
                scale,
                prior_weight,
            } => {
                if n_old != n_new || *column >= n_new {
                    return mismatch(format!("re-weight column {column} over {n_old} -> {n_new} tokens"));
                }
                // The source column already carries the prior weight.
                let factor = if *prior_weight != 0.0 { scale / prior_weight } else { *scale };
                for m in &source.maps {
                    maps.push(edit::scale_column(m, *column, factor)?);
                }
            }
        }
        Ok(AttentionStack {
            grid_height: fresh.grid_height,
            grid_width: fresh.grid_width,
            maps,
        })
    }
}

/// Convenience wrapper: build a generator and run it once.
pub fn generate(p: &Prompt, cfg: &GeneratorConfig) -> Result<(ToyImage, AttentionStack)> {
    Generator::new(cfg.clone())?.generate(p)
}

pub fn encode_png(img: &ToyImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::DimError(format!("png header: {e}")))?;
        w.write_image_data(&img.to_rgb8())
            .map_err(|e| Error::DimError(format!("png data: {e}")))?;
    }
    Ok(buf)
}

/// Writes an 8-bit RGB PNG with `round(255 * pixel)` per channel.
pub fn render_png(img: &ToyImage, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|source| Error::WriteError {
        path: path.to_owned(),
        source,
    })
}

/// Reads an 8-bit RGB PNG back into `[0, 1]` floats.
pub fn read_png(path: &Path) -> Result<ToyImage> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::DimError(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::DimError(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::DimError(format!("{}: expected 8-bit RGB", path.display())));
    }
    let data = buf[..info.buffer_size()]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    ToyImage::new(info.height as usize, info.width as usize, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cosine;
    use crate::prompt::{apply_edit, tokenize, EditOp, Vocab};

    fn gen() -> Generator {
        Generator::new(GeneratorConfig::default()).unwrap()
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let p = tokenize("a tranquil garden", &Vocab::default()).unwrap();
        let (a, sa) = gen().generate(&p).unwrap();
        let (b, sb) = gen().generate(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(sa.steps(), 10);
        assert_eq!(sa.tokens(), 3);
    }

    #[test]
    fn unedited_rows_are_stochastic() {
        let p = tokenize("a tranquil garden with blooming flowers", &Vocab::default()).unwrap();
        let (img, stack) = gen().generate(&p).unwrap();
        for m in &stack.maps {
            for s in m.row_sums() {
                assert!((s - 1.0).abs() < 1e-9);
            }
            assert!(m.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(img.data.len(), 32 * 32 * 3);
    }

    #[test]
    fn maps_vary_with_step() {
        let p = tokenize("a tranquil garden", &Vocab::default()).unwrap();
        let stack = gen().fresh_stack(&p).unwrap();
        assert_ne!(stack.maps[0], stack.maps[9]);
    }

    #[test]
    fn unit_reweight_leaves_image_unchanged() {
        let p = tokenize("a tranquil garden", &Vocab::default()).unwrap();
        let q = apply_edit(&p, &EditOp::Reweight { index: 1, scale: 1.0 }).unwrap();
        assert_eq!(gen().generate(&p).unwrap(), gen().generate(&q).unwrap());
    }

    #[test]
    fn self_embedding_cosine_is_one() {
        let p = tokenize("a serene blue lake", &Vocab::default()).unwrap();
        let (img, _) = gen().generate(&p).unwrap();
        let e = image_embedding(&img, 16).unwrap();
        assert_eq!(e, image_embedding(&img, 16).unwrap());
        assert!((cosine(&e, &e).unwrap() - 1.0).abs() < 1e-12);
        assert!((norm(&e) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_grey_image_is_degenerate() {
        let img = ToyImage::filled(32, 32, 3, 0.5);
        assert!(matches!(image_embedding(&img, 16), Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn embedding_is_lipschitz_in_pixels() {
        let p = tokenize("a red fox", &Vocab::default()).unwrap();
        let (img, _) = gen().generate(&p).unwrap();
        let base = image_embedding(&img, 16).unwrap();
        for idx in [0usize, 517, 3071] {
            let mut bumped = img.clone();
            bumped.data[idx] = (bumped.data[idx] + 1e-6).min(1.0);
            if bumped.data[idx] == img.data[idx] {
                bumped.data[idx] -= 1e-6;
            }
            let e = image_embedding(&bumped, 16).unwrap();
            let d: f64 = base.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(d <= 1e-4, "embedding moved {d}");
        }
    }

    #[test]
    fn mismatched_prompt_dimension_is_rejected() {
        let p = tokenize("a b", &Vocab::new(1, 8)).unwrap();
        assert!(matches!(gen().generate(&p), Err(Error::DimError(_))));
    }

    #[test]
    fn png_extremes_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let black = dir.path().join("black.png");
        render_png(&ToyImage::filled(4, 4, 3, 0.0), &black).unwrap();
        assert!(read_png(&black).unwrap().data.iter().all(|&v| v == 0.0));
        let white = dir.path().join("white.png");
        render_png(&ToyImage::filled(4, 4, 3, 1.0), &white).unwrap();
        assert!(read_png(&white).unwrap().data.iter().all(|&v| v == 1.0));

        let p = tokenize("a tranquil garden", &Vocab::default()).unwrap();
        let (img, _) = gen().generate(&p).unwrap();
        let path = dir.path().join("garden.png");
        render_png(&img, &path).unwrap();
        let back = read_png(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert_eq!((255.0 * a).round(), (255.0 * b).round());
        }
    }

    #[test]
    fn png_write_to_missing_dir_fails() {
        let err = render_png(
            &ToyImage::filled(2, 2, 3, 0.0),
            Path::new("/nonexistent/dir/x.png"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::WriteError { .. }));
    }

    #[test]
    fn config_validation() {
        let bad = GeneratorConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(Generator::new(bad).is_err());
        let bad = GeneratorConfig {
            latent_factor: 3,
            ..Default::default()
        };
        assert!(Generator::new(bad).is_err());
    }
}
