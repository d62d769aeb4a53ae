use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::real::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, SaliencyMap};

/// Shape hyperparameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub stage_channels: [usize; 4],
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 64,
            stage_channels: [16, 32, 64, 128],
            seed: 7,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of 16",
                self.input_size
            )));
        }
        if self.stage_channels.iter().any(|&c| c < 2) {
            return Err(Error::Config("every stage needs at least 2 channels".into()));
        }
        Ok(())
    }

    fn decoder_widths(&self) -> [usize; 4] {
        self.stage_channels.map(|c| (c / 2).max(1))
    }

    fn head_widths(&self) -> [usize; 4] {
        let c = self.stage_channels;
        [(c[3] / 4).max(1), (c[2] / 4).max(1), (c[1] / 4).max(1), (c[0] / 2).max(1)]
    }
}

/// Input modality of an encoder or prediction head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Thermal,
}

impl Modality {
    fn tag(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Thermal => "thermal",
        }
    }

    fn slot(self) -> usize {
        match self {
            Modality::Rgb => 0,
            Modality::Thermal => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    w: usize,
    b: usize,
    stride: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    // [modality][stage][conv1, conv2, down]
    encoders: [[[ConvSlot; 3]; 4]; 2],
    // d4, d3, d2, d1
    decoder: [ConvSlot; 4],
    head: ConvSlot,
    // [modality][up1..up4, out]
    predictors: [[ConvSlot; 5]; 2],
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        ParamStore { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::from_vec(t.shape(), t.data().iter().map(|v| U::from_f64(v.to_f64())).collect()).unwrap())
                .collect(),
        }
    }

    fn push_conv(&mut self, rng: &mut ChaCha8Rng, name: &str, ci: usize, co: usize, stride: usize) -> ConvSlot {
        let bound = (6.0 / (ci * 9) as f64).sqrt();
        let w: Vec<T> = (0..co * ci * 9)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        self.names.push(format!("{name}.weight"));
        self.tensors.push(Tensor::from_vec([co, ci, 3, 3], w).unwrap());
        self.names.push(format!("{name}.bias"));
        self.tensors.push(Tensor::zeros([1, co, 1, 1]));
        ConvSlot {
            w: self.tensors.len() - 2,
            b: self.tensors.len() - 1,
            stride,
        }
    }
}

/// Dual-encoder saliency network with per-modality prediction heads.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    params: ParamStore<T>,
    layout: Layout,
}

/// Parameters bound onto a tape for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Tape handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub features_rgb: [Var; 4],
    pub features_thermal: [Var; 4],
    pub saliency: Var,
    pub pred_rgb: Option<Var>,
    pub pred_thermal: Option<Var>,
}

impl<T: Real> Network<T> {
    /// Fresh network with seeded Kaiming-uniform weights and zero biases.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        };
        let c = config.stage_channels;
        let mut encoders = [[[ConvSlot { w: 0, b: 0, stride: 1 }; 3]; 4]; 2];
        for m in [Modality::Rgb, Modality::Thermal] {
            let mut cin = 3;
            for s in 0..4 {
                let base = format!("encoder_{}.stage{}", m.tag(), s + 1);
                encoders[m.slot()][s] = [
                    params.push_conv(&mut rng, &format!("{base}.conv1"), cin, c[s], 1),
                    params.push_conv(&mut rng, &format!("{base}.conv2"), c[s], c[s], 1),
                    params.push_conv(&mut rng, &format!("{base}.down"), c[s], c[s], 2),
                ];
                cin = c[s];
            }
        }
        let d = config.decoder_widths();
        let decoder = [
            params.push_conv(&mut rng, "decoder.d4", 2 * c[3], d[3], 1),
            params.push_conv(&mut rng, "decoder.d3", d[3] + 2 * c[2], d[2], 1),
            params.push_conv(&mut rng, "decoder.d2", d[2] + 2 * c[1], d[1], 1),
            params.push_conv(&mut rng, "decoder.d1", d[1] + 2 * c[0], d[0], 1),
        ];
        let head = params.push_conv(&mut rng, "decoder.head", d[0], 1, 1);
        let hw = config.head_widths();
        let mut predictors = [[ConvSlot { w: 0, b: 0, stride: 1 }; 5]; 2];
        for m in [Modality::Rgb, Modality::Thermal] {
            let mut cin = c[3];
            for (i, &width) in hw.iter().enumerate() {
                predictors[m.slot()][i] =
                    params.push_conv(&mut rng, &format!("predict_{}.up{}", m.tag(), i + 1), cin, width, 1);
                cin = width;
            }
            predictors[m.slot()][4] = params.push_conv(&mut rng, &format!("predict_{}.out", m.tag()), cin, 1, 1);
        }
        Ok(Network {
            config,
            params,
            layout: Layout {
                encoders,
                decoder,
                head,
                predictors,
            },
        })
    }

    /// Rebuild a network from stored parameters; names and shapes must match exactly.
    pub fn from_params(config: NetworkConfig, params: ParamStore<T>) -> Result<Self> {
        let mut net = Network::<T>::new(config)?;
        if params.names != net.params.names {
            let missing: Vec<&String> = net.params.names.iter().filter(|n| !params.names.contains(n)).collect();
            return Err(Error::Format(format!(
                "parameter set does not match network (missing or reordered: {:?})",
                missing.first()
            )));
        }
        for ((name, have), want) in params.names.iter().zip(&params.tensors).zip(&net.params.tensors) {
            if have.shape() != want.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Names of parameters owned by the given encoder.
    pub fn encoder_param_names(&self, m: Modality) -> Vec<&str> {
        let prefix = format!("encoder_{}.", m.tag());
        self.params
            .names
            .iter()
            .filter(|n| n.starts_with(&prefix))
            .map(|n| n.as_str())
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    fn conv(&self, tape: &mut Tape<T>, p: &Bound, slot: ConvSlot, x: Var) -> Result<Var> {
        tape.conv2d(x, p.vars[slot.w], p.vars[slot.b], slot.stride)
    }

    fn conv_relu(&self, tape: &mut Tape<T>, p: &Bound, slot: ConvSlot, x: Var) -> Result<Var> {
        let y = self.conv(tape, p, slot, x)?;
        tape.relu(y)
    }

    /// Four-stage encoder; stage `i` output sits at 1/2^i of the input size.
    pub fn encoder(&self, tape: &mut Tape<T>, p: &Bound, m: Modality, x: Var) -> Result<[Var; 4]> {
        let [_, c, h, w] = tape.value(x).shape();
        if c != 3 {
            return Err(Error::dim(format!("encoder expects 3 channels, got {c}")));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("input {h}x{w} is not divisible by 16")));
        }
        let mut cur = x;
        let mut feats = [x; 4];
        for (s, stage) in self.layout.encoders[m.slot()].iter().enumerate() {
            cur = self.conv_relu(tape, p, stage[0], cur)?;
            cur = self.conv_relu(tape, p, stage[1], cur)?;
            cur = self.conv_relu(tape, p, stage[2], cur)?;
            feats[s] = cur;
        }
        Ok(feats)
    }

    /// Fuse both feature pyramids top-down into a full-resolution saliency map.
    pub fn decoder(&self, tape: &mut Tape<T>, p: &Bound, fx: &[Var; 4], ft: &[Var; 4]) -> Result<Var> {
        let top = tape.concat(&[fx[3], ft[3]])?;
        let mut d = self.conv_relu(tape, p, self.layout.decoder[0], top)?;
        for (i, slot) in (0..3).rev().zip(&self.layout.decoder[1..]) {
            let up = tape.up2(d)?;
            let cat = tape.concat(&[up, fx[i], ft[i]])?;
            d = self.conv_relu(tape, p, *slot, cat)?;
        }
        let logit = self.conv(tape, p, self.layout.head, d)?;
        let full = tape.up2(logit)?;
        tape.sigmoid(full)
    }

    /// Prediction module on the deepest features of one modality.
    pub fn prediction_head(&self, tape: &mut Tape<T>, p: &Bound, m: Modality, f4: Var) -> Result<Var> {
        let expect = self.layout.predictors[m.slot()][0];
        let cin = self.params.tensors[expect.w].shape()[1];
        if tape.value(f4).channels() != cin {
            return Err(Error::dim(format!(
                "prediction head expects {cin} channels, got {}",
                tape.value(f4).channels()
            )));
        }
        let mut cur = f4;
        for slot in &self.layout.predictors[m.slot()][..4] {
            cur = self.conv_relu(tape, p, *slot, cur)?;
            cur = tape.up2(cur)?;
        }
        let logit = self.conv(tape, p, self.layout.predictors[m.slot()][4], cur)?;
        tape.sigmoid(logit)
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, rgb: Var, thermal: Var, heads: bool) -> Result<Forward> {
        let fx = self.encoder(tape, p, Modality::Rgb, rgb)?;
        let ft = self.encoder(tape, p, Modality::Thermal, thermal)?;
        let saliency = self.decoder(tape, p, &fx, &ft)?;
        let (pred_rgb, pred_thermal) = if heads {
            (
                Some(self.prediction_head(tape, p, Modality::Rgb, fx[3])?),
                Some(self.prediction_head(tape, p, Modality::Thermal, ft[3])?),
            )
        } else {
            (None, None)
        };
        Ok(Forward {
            features_rgb: fx,
            features_thermal: ft,
            saliency,
            pred_rgb,
            pred_thermal,
        })
    }

    /// Saliency for a batch of image pairs; encoders and decoder only.
    pub fn infer_batch(&self, pairs: &[(&ImageGrid, &ImageGrid)]) -> Result<Vec<SaliencyMap>> {
        let Some((first, _)) = pairs.first() else {
            return Ok(Vec::new());
        };
        let (h, w) = (first.height(), first.width());
        let mut rgb = Vec::with_capacity(pairs.len() * 3 * h * w);
        let mut th = Vec::with_capacity(pairs.len() * 3 * h * w);
        for (x, t) in pairs {
            for img in [x, t] {
                if img.channels() != 3 || img.height() != h || img.width() != w {
                    return Err(Error::dim(format!(
                        "inference batch expects 3x{h}x{w} images, got {}x{}x{}",
                        img.channels(),
                        img.height(),
                        img.width()
                    )));
                }
            }
            rgb.extend(x.data().iter().map(|&v| T::from_f64(v)));
            th.extend(t.data().iter().map(|&v| T::from_f64(v)));
        }
        let n = pairs.len();
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let xr = tape.constant(Tensor::from_vec([n, 3, h, w], rgb)?);
        let xt = tape.constant(Tensor::from_vec([n, 3, h, w], th)?);
        let out = self.forward(&mut tape, &p, xr, xt, false)?;
        let r = tape.value(out.saliency);
        (0..n)
            .map(|i| SaliencyMap::from_clamped(h, w, r.item(i).iter().map(|v| v.to_f64()).collect()))
            .collect()
    }

    /// Outputs of both prediction heads for one image pair.
    pub fn predict_labels(&self, rgb: &ImageGrid, thermal: &ImageGrid) -> Result<(SaliencyMap, SaliencyMap)> {
        check_pair(rgb, thermal)?;
        let (h, w) = (rgb.height(), rgb.width());
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let xr = tape.constant(Tensor::from_planes(3, h, w, rgb.data())?);
        let xt = tape.constant(Tensor::from_planes(3, h, w, thermal.data())?);
        let fx = self.encoder(&mut tape, &p, Modality::Rgb, xr)?;
        let ft = self.encoder(&mut tape, &p, Modality::Thermal, xt)?;
        let px = self.prediction_head(&mut tape, &p, Modality::Rgb, fx[3])?;
        let pt = self.prediction_head(&mut tape, &p, Modality::Thermal, ft[3])?;
        let map = |v: Var| SaliencyMap::from_clamped(h, w, tape.value(v).to_f64());
        Ok((map(px)?, map(pt)?))
    }

    pub fn infer(&self, rgb: &ImageGrid, thermal: &ImageGrid) -> Result<SaliencyMap> {
        check_pair(rgb, thermal)?;
        Ok(self.infer_batch(&[(rgb, thermal)])?.remove(0))
    }
}

fn check_pair(rgb: &ImageGrid, thermal: &ImageGrid) -> Result<()> {
    if rgb.height() != thermal.height() || rgb.width() != thermal.width() {
        return Err(Error::dim(format!(
            "rgb {}x{} vs thermal {}x{}",
            rgb.height(),
            rgb.width(),
            thermal.height(),
            thermal.width()
        )));
    }
    Ok(())
}
