//! Deterministic parameter initialization.
//!
//! candle's CPU random initializers draw from a thread-local generator that
//! cannot be seeded, so models are built through this backend instead: it
//! honours the same init hints but samples from a seeded ChaCha stream in
//! construction order.

use std::sync::Mutex;

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::{Init, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) struct SeededBackend {
    map: VarMap,
    rng: Mutex<ChaCha8Rng>,
}

impl SeededBackend {
    pub(crate) fn builder(map: &VarMap, seed: u64) -> VarBuilder<'static> {
        let backend = SeededBackend {
            map: map.clone(),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        };
        VarBuilder::from_backend(Box::new(backend), DType::F32, Device::Cpu)
    }

    fn sample(&self, shape: &Shape, init: Init) -> Vec<f32> {
        let n = shape.elem_count();
        let mut rng = self.rng.lock().expect("init rng poisoned");
        let normal = |rng: &mut ChaCha8Rng, mean: f64, std: f64| {
            (0..n)
                .map(|_| { let z: f64 = StandardNormal.sample(rng); (mean + std * z) as f32 })
                .collect()
        };
        let uniform = |rng: &mut ChaCha8Rng, lo: f64, up: f64| (0..n).map(|_| rng.random_range(lo..up) as f32).collect();
        match init {
            Init::Const(c) => vec![c as f32; n],
            Init::Randn { mean, stdev } => normal(&mut rng, mean, stdev),
            Init::Uniform { lo, up } => uniform(&mut rng, lo, up),
            Init::Kaiming {
                dist,
                fan,
                non_linearity,
            } => {
                let std = non_linearity.gain() / (fan.for_shape(shape) as f64).sqrt();
                match dist {
                    NormalOrUniform::Normal => normal(&mut rng, 0.0, std),
                    NormalOrUniform::Uniform => {
                        let b = 3f64.sqrt() * std;
                        uniform(&mut rng, -b, b)
                    }
                }
            }
        }
    }
}

impl SimpleBackend for SeededBackend {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        if let Some(v) = self.map.data().lock().expect("var map poisoned").get(name) {
            if v.shape() != &s {
                candle_core::bail!("shape mismatch on {name}: {s:?} vs {:?}", v.shape());
            }
            return Ok(v.as_tensor().clone());
        }
        let values = self.sample(&s, h);
        let var = Var::from_tensor(&Tensor::from_vec(values, s, dev)?.to_dtype(dtype)?)?;
        let t = var.as_tensor().clone();
        self.map.data().lock().expect("var map poisoned").insert(name.to_string(), var);
        Ok(t)
    }

    fn get_unchecked(&self, name: &str, _dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        match self.map.data().lock().expect("var map poisoned").get(name) {
            Some(v) => Ok(v.as_tensor().clone()),
            None => candle_core::bail!("no variable {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.map.data().lock().expect("var map poisoned").contains_key(name)
    }
}
