//! Dense-connectivity convolutional encoder.
//!
//! A 3×3 stem, then `log2(ζ)` stages of a dense block followed by a 1×1
//! transition and 2×2 average pooling, then a 1×1 projection to `C`
//! channels. Every convolution except the projection is followed by ReLU.

use rand::Rng;

use crate::model::{ModelConfig, ModelError};
use crate::numerics::{NumericsError, ParamId, ParamStore, Tape, Var};

/// Grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<GrayImage, ModelError> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(ModelError::InvalidConfig(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels
            .iter()
            .find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p)))
        {
            return Err(ModelError::InvalidConfig(format!(
                "pixel value {p} outside [0, 1]"
            )));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn blank(height: usize, width: usize) -> GrayImage {
        assert!(height > 0 && width > 0, "image dims must be positive");
        GrayImage {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Sets a pixel, clamping to `[0, 1]`.
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Zero-pads on the bottom and right up to the next multiple of `zeta`.
    pub fn pad_to_multiple(&self, zeta: usize) -> GrayImage {
        let h = self.height.div_ceil(zeta) * zeta;
        let w = self.width.div_ceil(zeta) * zeta;
        if (h, w) == (self.height, self.width) {
            return self.clone();
        }
        let mut out = GrayImage::blank(h, w);
        for y in 0..self.height {
            out.pixels[y * w..y * w + self.width]
                .copy_from_slice(&self.pixels[y * self.width..(y + 1) * self.width]);
        }
        out
    }
}

/// Encoder output: `L = rows·cols` feature vectors of width `C`, row-major
/// over the down-sampled grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// `L × C`, one row per cell.
    pub features: Vec<f64>,
}

impl AnnotationGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }
}

/// Row-major `(row, col)` of every cell index.
pub fn flatten_positions(grid: &AnnotationGrid) -> Vec<(usize, usize)> {
    (0..grid.len())
        .map(|i| (i / grid.cols, i % grid.cols))
        .collect()
}

/// Annotation grid recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GridVar {
    /// `L × C`.
    pub annotations: Var,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    kernel: usize,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    zeta: usize,
    channels: usize,
    stem: Conv,
    blocks: Vec<Vec<Conv>>,
    transitions: Vec<Conv>,
    proj: Conv,
}

/// Names and shapes `(name, out, in, kernel)` of every convolution.
fn layout(config: &ModelConfig) -> Vec<(String, usize, usize, usize)> {
    let mut out = vec![("enc.stem".to_string(), config.stem_channels, 1, 3)];
    let mut width = config.stem_channels;
    for s in 0..config.zeta.trailing_zeros() as usize {
        for l in 0..config.block_layers {
            out.push((format!("enc.b{s}.l{l}"), config.growth, width, 3));
            width += config.growth;
        }
        let next = (width / 2).max(1);
        out.push((format!("enc.t{s}"), next, width, 1));
        width = next;
    }
    out.push(("enc.proj".to_string(), config.channels, width, 1));
    out
}

impl Encoder {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Encoder, ModelError> {
        config.validate()?;
        for (name, cout, cin, k) in layout(config) {
            let fan_in = cin * k * k;
            let w = format!("{name}.w");
            if name == "enc.proj" {
                store.add_xavier(&w, cout, fan_in, fan_in, cout * k * k, rng)?;
            } else {
                store.add_he(&w, cout, fan_in, fan_in, rng)?;
            }
            store.add_zeros(&format!("{name}.b"), cout, 1)?;
        }
        Self::lookup(store, config)
    }

    pub fn lookup(store: &ParamStore, config: &ModelConfig) -> Result<Encoder, ModelError> {
        config.validate()?;
        let mut convs = Vec::new();
        for (name, cout, cin, k) in layout(config) {
            let w = store.id(&format!("{name}.w"))?;
            let b = store.id(&format!("{name}.b"))?;
            if store.value(w).shape() != (cout, cin * k * k) || store.value(b).shape() != (cout, 1)
            {
                return Err(NumericsError::ShapeMismatch(format!(
                    "{name} does not match the configuration"
                ))
                .into());
            }
            convs.push(Conv { w, b, kernel: k });
        }
        let mut it = convs.into_iter();
        let stem = it.next().expect("stem");
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for _ in 0..config.zeta.trailing_zeros() {
            blocks.push(it.by_ref().take(config.block_layers).collect());
            transitions.push(it.next().expect("transition"));
        }
        let proj = it.next().expect("projection");
        Ok(Encoder {
            zeta: config.zeta,
            channels: config.channels,
            stem,
            blocks,
            transitions,
            proj,
        })
    }

    pub fn zeta(&self) -> usize {
        self.zeta
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn check(&self, image: &GrayImage) -> Result<(), ModelError> {
        if !image.height.is_multiple_of(self.zeta) || !image.width.is_multiple_of(self.zeta) {
            return Err(ModelError::IndivisibleDimensions {
                height: image.height,
                width: image.width,
                zeta: self.zeta,
            });
        }
        Ok(())
    }

    /// Records the forward pass; the result is differentiable with respect
    /// to every encoder parameter.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        image: &GrayImage,
    ) -> Result<GridVar, ModelError> {
        self.check(image)?;
        let (mut h, mut w) = (image.height, image.width);
        let conv =
            |tape: &mut Tape, c: &Conv, x: Var, h: usize, w: usize| -> Result<Var, NumericsError> {
                let wv = tape.param(store, c.w);
                let bv = tape.param(store, c.b);
                tape.conv2d(x, wv, bv, h, w, c.kernel)
            };
        let x = tape.input(1, h * w, image.pixels.clone())?;
        let stem = conv(tape, &self.stem, x, h, w)?;
        let mut x = tape.relu(stem);
        for (block, trans) in self.blocks.iter().zip(&self.transitions) {
            let mut features = vec![x];
            for layer in block {
                let input = if features.len() == 1 {
                    features[0]
                } else {
                    tape.concat_rows(&features)?
                };
                let y = conv(tape, layer, input, h, w)?;
                features.push(tape.relu(y));
            }
            let all = tape.concat_rows(&features)?;
            let t = conv(tape, trans, all, h, w)?;
            let t = tape.relu(t);
            x = tape.avg_pool2(t, h, w)?;
            h /= 2;
            w /= 2;
        }
        let out = conv(tape, &self.proj, x, h, w)?;
        Ok(GridVar {
            annotations: tape.transpose(out),
            rows: h,
            cols: w,
        })
    }

    pub fn encode(
        &self,
        store: &ParamStore,
        image: &GrayImage,
    ) -> Result<AnnotationGrid, ModelError> {
        let mut tape = Tape::new();
        let g = self.encode_on_tape(&mut tape, store, image)?;
        Ok(AnnotationGrid {
            rows: g.rows,
            cols: g.cols,
            channels: self.channels,
            features: tape.value(g.annotations).to_vec(),
        })
    }
}
