use crate::error::{Error, Result};
use crate::numgraph::Tensor;

/// Momentum SGD with L2 weight decay and step-wise learning-rate division.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    /// Epoch counts after which the learning rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

/// Fractions of the run at which the reference schedule divides the rate.
pub const MILESTONE_FRACTIONS: [f64; 3] = [0.3, 0.6, 0.8];

impl SgdConfig {
    /// lr 0.1, Nesterov momentum 0.9, decay 5e-4, division by 5 at
    /// 30%, 60% and 80% of `epochs`.
    pub fn reference(epochs: usize) -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 5e-4,
            milestones: scaled_milestones(epochs),
            gamma: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "base learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.nesterov && self.momentum == 0.0 {
            return Err(Error::invalid("Nesterov momentum needs momentum > 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("lr gamma must be in (0, 1], got {}", self.gamma)));
        }
        check_milestones(&self.milestones)
    }
}

/// Milestones at [`MILESTONE_FRACTIONS`] of `epochs`, deduplicated, each in `1..epochs`.
pub fn scaled_milestones(epochs: usize) -> Vec<usize> {
    let mut out: Vec<usize> = MILESTONE_FRACTIONS
        .iter()
        .map(|f| (f * epochs as f64).round() as usize)
        .filter(|&m| m >= 1 && m < epochs)
        .collect();
    out.dedup();
    out
}

fn check_milestones(m: &[usize]) -> Result<()> {
    if m.windows(2).any(|w| w[0] >= w[1]) || m.first() == Some(&0) {
        return Err(Error::invalid(format!(
            "milestones must be strictly increasing and positive, got {m:?}"
        )));
    }
    Ok(())
}

/// Learning rate after `epochs_done` completed epochs.
fn scheduled(base: f64, factor: f64, milestones: &[usize], epochs_done: usize) -> f64 {
    let crossed = milestones.iter().filter(|&&m| m <= epochs_done).count();
    base * factor.powi(crossed as i32)
}

pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<Vec<f64>>,
    epochs_done: usize,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            velocity: Vec::new(),
            epochs_done: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        scheduled(self.cfg.lr, self.cfg.gamma, &self.cfg.milestones, self.epochs_done)
    }

    pub fn end_epoch(&mut self) {
        self.epochs_done += 1;
    }

    /// Applies one update from the accumulated grads; tensors without a grad are skipped.
    pub fn step(&mut self, params: &mut [&mut Tensor]) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        let lr = self.lr();
        let SgdConfig {
            momentum,
            nesterov,
            weight_decay,
            ..
        } = self.cfg;
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            let Some(grad) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            for ((w, g), v) in p.data_mut().iter_mut().zip(grad).zip(vel.iter_mut()) {
                let g = g + weight_decay * *w;
                let update = if momentum > 0.0 {
                    *v = momentum * *v + g;
                    if nesterov {
                        g + momentum * *v
                    } else {
                        *v
                    }
                } else {
                    g
                };
                *w -= lr * update;
            }
        }
    }
}

/// Adam with bias correction and coupled L2 decay; the rate is multiplied by
/// `decay` at each milestone.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay: f64,
    pub milestones: Vec<usize>,
}

/// Multiplicative decay factors admitted for the selector schedule.
pub const SELECTOR_DECAY_CHOICES: [f64; 4] = [0.1, 0.2, 0.5, 0.8];

impl AdamConfig {
    pub fn reference(epochs: usize) -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay: 0.5,
            milestones: scaled_milestones(epochs),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1e-5..=1e-1).contains(&self.lr) {
            return Err(Error::invalid(format!(
                "selector learning rate must be in [1e-5, 1e-1], got {}",
                self.lr
            )));
        }
        if !SELECTOR_DECAY_CHOICES.contains(&self.decay) {
            return Err(Error::invalid(format!(
                "selector lr decay must be one of {SELECTOR_DECAY_CHOICES:?}, got {}",
                self.decay
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::invalid("Adam eps must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        check_milestones(&self.milestones)
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: i32,
    epochs_done: usize,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
            epochs_done: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        scheduled(self.cfg.lr, self.cfg.decay, &self.cfg.milestones, self.epochs_done)
    }

    pub fn end_epoch(&mut self) {
        self.epochs_done += 1;
    }

    pub fn step(&mut self, params: &mut [&mut Tensor]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let lr = self.lr();
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.steps);
        let c2 = 1.0 - beta2.powi(self.steps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            for (((w, g), mi), vi) in p.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g + weight_decay * *w;
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(w: f64) -> Tensor {
        Tensor::param(vec![1], vec![w]).unwrap()
    }

    fn set_grad(t: &mut Tensor, g: f64) {
        t.zero_grad();
        t.accumulate_grad(&[g]).unwrap();
    }

    #[test]
    fn plain_sgd_step_on_quadratic() {
        let mut opt = Sgd::new(SgdConfig {
            lr: 0.1,
            momentum: 0.0,
            nesterov: false,
            weight_decay: 0.0,
            milestones: vec![],
            gamma: 0.2,
        })
        .unwrap();
        let mut w = scalar_param(1.0);
        // d/dw (w^2 / 2) = w
        set_grad(&mut w, 1.0);
        opt.step(&mut [&mut w]);
        assert!((w.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn milestones_divide_lr_once_each() {
        let mut opt = Sgd::new(SgdConfig {
            milestones: vec![2, 4],
            ..SgdConfig::reference(10)
        })
        .unwrap();
        let mut seen = Vec::new();
        for _ in 0..6 {
            seen.push(opt.lr());
            opt.end_epoch();
        }
        let expect = [0.1, 0.1, 0.02, 0.02, 0.004, 0.004];
        for (a, b) in seen.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{seen:?}");
        }
    }

    #[test]
    fn weight_decay_augments_gradient() {
        let d = 0.3;
        let mut opt = Sgd::new(SgdConfig {
            lr: 1.0,
            momentum: 0.0,
            nesterov: false,
            weight_decay: d,
            milestones: vec![],
            gamma: 0.2,
        })
        .unwrap();
        let mut w = scalar_param(2.0);
        set_grad(&mut w, 0.5);
        opt.step(&mut [&mut w]);
        assert!((w.data()[0] - (2.0 - (0.5 + d * 2.0))).abs() < 1e-15);
    }

    #[test]
    fn nesterov_matches_hand_iteration() {
        let mut opt = Sgd::new(SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 0.0,
            milestones: vec![],
            gamma: 0.2,
        })
        .unwrap();
        let mut w = scalar_param(1.0);
        let (mut ref_w, mut ref_v) = (1.0f64, 0.0f64);
        for _ in 0..5 {
            let g = w.data()[0];
            set_grad(&mut w, g);
            opt.step(&mut [&mut w]);
            ref_v = 0.9 * ref_v + ref_w;
            ref_w -= 0.1 * (ref_w + 0.9 * ref_v);
            assert!((w.data()[0] - ref_w).abs() < 1e-14);
        }
    }

    #[test]
    fn scaled_milestones_follow_reference_fractions() {
        assert_eq!(scaled_milestones(200), vec![60, 120, 160]);
        assert_eq!(scaled_milestones(10), vec![3, 6, 8]);
        assert_eq!(scaled_milestones(1), Vec::<usize>::new());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::new(AdamConfig::reference(10)).unwrap();
        let mut w = scalar_param(0.0);
        set_grad(&mut w, 3.7);
        opt.step(&mut [&mut w]);
        assert!((w.data()[0] + 1e-2).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut opt = Adam::new(AdamConfig::reference(10)).unwrap();
        let mut w = scalar_param(0.25);
        set_grad(&mut w, 0.0);
        opt.step(&mut [&mut w]);
        assert_eq!(w.data()[0], 0.25);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut opt = Adam::new(AdamConfig::reference(10)).unwrap();
            let mut w = scalar_param(1.0);
            for _ in 0..20 {
                let g = 2.0 * w.data()[0] - 0.3;
                set_grad(&mut w, g);
                opt.step(&mut [&mut w]);
            }
            w.data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(Sgd::new(SgdConfig {
            lr: 0.0,
            ..SgdConfig::reference(10)
        })
        .is_err());
        assert!(Sgd::new(SgdConfig {
            milestones: vec![5, 5],
            ..SgdConfig::reference(10)
        })
        .is_err());
        assert!(Adam::new(AdamConfig {
            lr: 0.5,
            ..AdamConfig::reference(10)
        })
        .is_err());
        assert!(Adam::new(AdamConfig {
            decay: 0.3,
            ..AdamConfig::reference(10)
        })
        .is_err());
    }
}
