//! Image → primitive set: patch tokens, encoder, learned queries, decoder and
//! three heads (type, construction flag, parameters).

use candle_core::{Device, Module, Tensor};
use candle_nn::init::Init;
use candle_nn::{linear, Linear, VarMap};
use sketch2cad_core::dataset::RasterImage;
use sketch2cad_core::prediction::{ParamPrediction, PrimitivePredictionSet, BINS};
use sketch2cad_core::sketch::{PrimitiveType, PARAM_SLOTS};

use crate::config::{ParamHeadMode, PrimitiveModelConfig};
use crate::error::{Error, Result};
use crate::init::SeededBackend;
use crate::layers::{Decoder, Encoder, Mlp};

/// Raw head outputs for a batch.
pub struct PrimitiveLogits {
    /// `[B, N, 5]`
    pub types: Tensor,
    /// `[B, N, 2]`
    pub flags: Tensor,
    /// `[B, N, 7, 64]` bin logits, or `[B, N, 7]` unit-square values in regression mode.
    pub params: Tensor,
    pub mode: ParamHeadMode,
}

impl PrimitiveLogits {
    pub fn batch(&self) -> usize {
        self.types.dims()[0]
    }

    pub fn to_predictions(&self) -> Result<Vec<PrimitivePredictionSet>> {
        let to_f64 = |t: &Tensor| -> Result<Vec<f64>> {
            Ok(t.flatten_all()?.to_vec1::<f32>()?.into_iter().map(f64::from).collect())
        };
        let b = self.batch();
        let n = self.types.dims()[1];
        let (types, flags, params) = (to_f64(&self.types)?, to_f64(&self.flags)?, to_f64(&self.params)?);
        let per = params.len() / b;
        (0..b)
            .map(|i| {
                let p = params[i * per..(i + 1) * per].to_vec();
                let p = match self.mode {
                    ParamHeadMode::Classification => ParamPrediction::Bins(p),
                    ParamHeadMode::Regression => ParamPrediction::Values(p),
                };
                let tc = PrimitiveType::COUNT;
                Ok(PrimitivePredictionSet::from_logits(
                    n,
                    &types[i * n * tc..(i + 1) * n * tc],
                    &flags[i * n * 2..(i + 1) * n * 2],
                    p,
                )?)
            })
            .collect()
    }
}

/// Splits `[B, H, W]` images into row-major `ph × pw` patches, each flattened:
/// `[B, (H/ph)·(W/pw), ph·pw]`.
pub fn patchify(images: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let (b, h, w) = images.dims3()?;
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Config(format!("{ph}x{pw} patches do not tile a {h}x{w} image")));
    }
    let (gh, gw) = (h / ph, w / pw);
    Ok(images
        .reshape((b, gh, ph, gw, pw))?
        .permute((0, 1, 3, 2, 4))?
        .reshape((b, gh * gw, ph * pw))?)
}

/// Stacks images into a `[B, 128, 128]` tensor.
pub fn images_tensor(images: &[&RasterImage]) -> Result<Tensor> {
    let n = sketch2cad_core::dataset::IMAGE_SIZE;
    let mut data = Vec::with_capacity(images.len() * n * n);
    for img in images {
        if img.pixels.len() != n * n {
            return Err(Error::Config(format!("image has {} pixels, expected {}", img.pixels.len(), n * n)));
        }
        data.extend_from_slice(&img.pixels);
    }
    Ok(Tensor::from_vec(data, (images.len(), n, n), &Device::Cpu)?)
}

/// `[gh·gw, d]` table: first half of the channels encodes the patch row, second
/// half the column, each as sin/cos pairs over geometric frequencies.
fn sincos_2d(gh: usize, gw: usize, d: usize) -> Result<Tensor> {
    let quarter = (d / 4).max(1);
    let mut data = Vec::with_capacity(gh * gw * d);
    for r in 0..gh {
        for c in 0..gw {
            let row = data.len();
            for (pos, _) in [(r, 0), (c, 1)] {
                for i in 0..quarter {
                    let a = pos as f64 / 100f64.powf(i as f64 / quarter as f64);
                    data.push(a.sin() as f32);
                    data.push(a.cos() as f32);
                }
            }
            data.resize(row + d, 0.0);
        }
    }
    Ok(Tensor::from_vec(data, (gh * gw, d), &Device::Cpu)?)
}

pub struct PrimitiveNet {
    cfg: PrimitiveModelConfig,
    vars: VarMap,
    patch: Mlp,
    pos_e: Tensor,
    encoder: Encoder,
    queries: Tensor,
    pos_d: Tensor,
    decoder: Decoder,
    type_head: Mlp,
    flag_head: Mlp,
    param_trunk: Linear,
    param_head: Linear,
}

impl PrimitiveNet {
    /// Freshly initialized from `cfg.seed`.
    pub fn new(cfg: &PrimitiveModelConfig) -> Result<Self> {
        cfg.validate()?;
        let vars = VarMap::new();
        let vb = SeededBackend::builder(&vars, cfg.seed);
        let t = cfg.transformer();
        let d = t.d_model;
        let k = cfg.patches();
        let n = cfg.queries;
        let slot_out = match cfg.param_head_mode {
            ParamHeadMode::Classification => PARAM_SLOTS * BINS,
            ParamHeadMode::Regression => PARAM_SLOTS,
        };
        let net = Self {
            patch: Mlp::new(cfg.patch_h * cfg.patch_w, d, d, vb.pp("patch"))?,
            pos_e: vb.get_with_hints((1, k, d), "pos_e", Init::Randn { mean: 0.0, stdev: 0.1 })?,
            encoder: Encoder::new(&t, vb.pp("encoder"))?,
            queries: vb.get_with_hints((1, n, d), "queries", Init::Randn { mean: 0.0, stdev: 1.0 })?,
            pos_d: vb.get_with_hints((1, n, d), "pos_d", Init::Randn { mean: 0.0, stdev: 0.1 })?,
            decoder: Decoder::new(&t, vb.pp("decoder"))?,
            type_head: Mlp::new(d, d, PrimitiveType::COUNT, vb.pp("type_head"))?,
            flag_head: Mlp::new(d, d, 2, vb.pp("flag_head"))?,
            param_trunk: linear(d, d, vb.pp("param_trunk"))?,
            param_head: linear(d, slot_out, vb.pp("param_head"))?,
            cfg: cfg.clone(),
            vars,
        };
        // Learned, but started from a 2D sinusoidal table so patch location is
        // available from the first step.
        if let Some(v) = net.vars.data().lock().expect("var map poisoned").get("pos_e") {
            v.set(&sincos_2d(cfg.image_size / cfg.patch_h, cfg.image_size / cfg.patch_w, d)?.unsqueeze(0)?)?;
        }
        Ok(net)
    }

    pub fn config(&self) -> &PrimitiveModelConfig {
        &self.cfg
    }

    pub fn vars(&self) -> &VarMap {
        &self.vars
    }

    /// `images: [B, 128, 128]`.
    pub fn forward(&self, images: &Tensor) -> Result<PrimitiveLogits> {
        let size = self.cfg.image_size;
        let (b, h, w) = images.dims3()?;
        if h != size || w != size {
            return Err(Error::Config(format!("expected {size}x{size} images, got {h}x{w}")));
        }
        let tokens = self.patch.forward(&patchify(images, self.cfg.patch_h, self.cfg.patch_w)?)?;
        // Also added to the content: attention values carry no position otherwise, and
        // empty or identical patches would be indistinguishable to the parameter heads.
        let tokens = tokens.broadcast_add(&self.pos_e)?;
        let mem = self.encoder.forward(&tokens, Some(&self.pos_e), None)?;
        let f = self.decoder.forward(&self.queries, &self.pos_d, &mem, Some(&self.pos_e), None)?;
        let n = self.cfg.queries;
        let trunk = self.param_trunk.forward(&f)?.relu()?;
        let raw = self.param_head.forward(&trunk)?;
        let params = match self.cfg.param_head_mode {
            ParamHeadMode::Classification => raw.reshape((b, n, PARAM_SLOTS, BINS))?,
            ParamHeadMode::Regression => candle_nn::ops::sigmoid(&raw)?,
        };
        Ok(PrimitiveLogits {
            types: self.type_head.forward(&f)?,
            flags: self.flag_head.forward(&f)?,
            params,
            mode: self.cfg.param_head_mode,
        })
    }

    pub fn predict(&self, images: &[&RasterImage]) -> Result<Vec<PrimitivePredictionSet>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        self.forward(&images_tensor(images)?)?.to_predictions()
    }
}
