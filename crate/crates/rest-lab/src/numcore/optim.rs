use super::tensor::ParamSet;
use super::NumError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

/// In-place parameter updater. Holds per-parameter moment accumulators
/// for the adaptive rule; allocates them lazily on the first step.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f32,
    pub weight_decay: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn sgd(lr: f32) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Optimizer { kind: OptimizerKind::Sgd, lr, weight_decay: 0.0, step: 0, m: vec![], v: vec![] }
    }

    pub fn adam(lr: f32) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Optimizer {
            kind: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            lr,
            weight_decay: 0.0,
            step: 0,
            m: vec![],
            v: vec![],
        }
    }

    pub fn with_weight_decay(mut self, wd: f32) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter, then clear gradients.
    /// Every parameter must carry a finite gradient.
    pub fn step(&mut self, set: &mut ParamSet) -> Result<(), NumError> {
        for p in &set.params {
            match &p.grad {
                None => return Err(NumError::MissingGrad { name: p.name.clone() }),
                Some(g) => {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(NumError::NonFinite {
                            context: format!("gradient of parameter '{}'", p.name),
                        });
                    }
                }
            }
        }
        if self.m.is_empty() {
            self.m = set.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = set.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        self.step += 1;
        let t = self.step as i32;
        for (pi, p) in set.params.iter_mut().enumerate() {
            let g = p.grad.as_ref().unwrap();
            let vals = p.value.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (k, v) in vals.iter_mut().enumerate() {
                        let gk = g[k] + self.weight_decay * *v;
                        *v -= self.lr * gk;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let m = &mut self.m[pi];
                    let vv = &mut self.v[pi];
                    for (k, v) in vals.iter_mut().enumerate() {
                        let gk = g[k] + self.weight_decay * *v;
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                        vv[k] = beta2 * vv[k] + (1.0 - beta2) * gk * gk;
                        let mhat = m[k] / bc1;
                        let vhat = vv[k] / bc2;
                        *v -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        set.clear_grads();
        Ok(())
    }
}
