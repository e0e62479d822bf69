//! Adam with persistent, serializable moment estimates.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{Device, Tensor, Var};

use crate::config::OptimConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    params: Vec<(String, Var)>,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &OptimConfig) -> Result<Self> {
        let params: Vec<(String, Var)> = store.iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
        let moments = params
            .iter()
            .map(|(n, v)| {
                let z = v.as_tensor().zeros_like()?;
                Ok((n.clone(), (z.clone(), z)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            steps: 0,
            params,
            moments,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in &self.params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let (m, v) = self.moments.get_mut(name).expect("moments for every parameter");
            *m = ((&*m * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            *v = ((&*v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&*m / c1)?;
            let v_hat = (&*v / c2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - (update * self.lr)?)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut map = HashMap::new();
        for (name, (m, v)) in &self.moments {
            map.insert(format!("{name}.m"), m.clone());
            map.insert(format!("{name}.v"), v.clone());
        }
        map.insert(
            "__steps".to_string(),
            Tensor::new(&[self.steps as f64], &Device::Cpu)?,
        );
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let map = candle_core::safetensors::load(path, &Device::Cpu)?;
        let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        for (name, (m, v)) in self.moments.iter_mut() {
            for (suffix, slot) in [("m", &mut *m), ("v", &mut *v)] {
                let key = format!("{name}.{suffix}");
                let t = map.get(&key).ok_or_else(|| bad(format!("missing `{key}`")))?;
                if t.dims() != slot.dims() {
                    return Err(bad(format!("`{key}` has shape {:?}", t.dims())));
                }
                *slot = t.to_dtype(slot.dtype())?;
            }
        }
        let steps = map.get("__steps").ok_or_else(|| bad("missing step count".into()))?;
        self.steps = steps.to_vec1::<f64>()?[0] as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use candle_core::DType;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = ParamStore::new(0, DType::F64);
        let w = ps.constant("w", &[3], 1.0).unwrap();
        let cfg = Config::paper().optim;
        let mut adam = Adam::new(&ps, &cfg).unwrap();
        let target = Tensor::new(&[0.0f64, 2.0, 1.0], &Device::Cpu).unwrap();
        let loss = (&w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
        adam.step(&loss.backward().unwrap()).unwrap();
        let after: Vec<f64> = ps.get("w").unwrap().as_tensor().to_vec1().unwrap();
        assert!((after[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((after[1] - (1.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(after[2], 1.0);
    }

    #[test]
    fn state_roundtrip_reproduces_trajectory() {
        let run = |split: bool| {
            let dir = tempfile::tempdir().unwrap();
            let mut ps = ParamStore::new(0, DType::F64);
            let w = ps.normal("w", &[4], 1.0).unwrap();
            let cfg = Config::paper().optim;
            let mut adam = Adam::new(&ps, &cfg).unwrap();
            for i in 0..6 {
                if split && i == 3 {
                    let path = dir.path().join("adam.safetensors");
                    adam.save(&path).unwrap();
                    adam = Adam::new(&ps, &cfg).unwrap();
                    adam.load(&path).unwrap();
                }
                let loss = w.sqr().unwrap().sum_all().unwrap();
                adam.step(&loss.backward().unwrap()).unwrap();
            }
            ps.checksum().unwrap()
        };
        assert_eq!(run(false), run(true));
    }
}
