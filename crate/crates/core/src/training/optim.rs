use std::collections::BTreeMap;

use candle::backprop::GradStore;
use candle::{Tensor, Var};
use candle_nn::VarMap;

use crate::error::{Error, Result};

/// SGD with heavy-ball momentum: `v <- mu * v + g + wd * p`, `p <- p - lr * v`.
///
/// Parameters are visited in name order so updates are reproducible.
#[derive(Debug)]
pub struct Sgd {
    vars: Vec<(String, Var)>,
    velocity: BTreeMap<String, Tensor>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(varmap: &VarMap, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && (0.0..1.0).contains(&momentum) && weight_decay >= 0.0) {
            return Err(Error::config(format!(
                "invalid optimizer settings: lr {learning_rate}, momentum {momentum}, weight decay {weight_decay}"
            )));
        }
        let mut vars: Vec<(String, Var)> = varmap
            .data()
            .lock()
            .expect("varmap lock poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self {
            vars,
            velocity: BTreeMap::new(),
            learning_rate,
            momentum,
            weight_decay,
        })
    }

    /// Applies one update; parameters without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        for (name, var) in &self.vars {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let mut g = g.clone();
            if self.weight_decay > 0.0 {
                g = (g + (var.as_tensor() * self.weight_decay)?)?;
            }
            let v = match self.velocity.get(name) {
                Some(prev) => ((prev * self.momentum)? + g)?,
                None => g,
            };
            var.set(&(var.as_tensor() - (&v * self.learning_rate)?)?)?;
            self.velocity.insert(name.clone(), v.detach());
        }
        Ok(())
    }
}
