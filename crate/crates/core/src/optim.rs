//! Adam optimizer and a reduce-on-plateau learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for every parameter plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T = f64> {
    pub config: AdamConfig,
    first: MlpParams<T>,
    second: MlpParams<T>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &MlpParams<T>, config: AdamConfig) -> Self {
        Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Current step size; the scheduler writes it back each epoch.
    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One bias-corrected Adam update of `params` with gradient `grads`.
    pub fn step(&mut self, params: &mut MlpParams<T>, grads: &MlpParams<T>) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.first) {
            return Err(Error::shape(
                "adam_step",
                format!("{:?}", params.dims()),
                format!("{:?}", grads.dims()),
            ));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let corr1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let corr2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);

        let layers = params.layers_mut().iter_mut();
        let moments = self
            .first
            .layers_mut()
            .iter_mut()
            .zip(self.second.layers_mut().iter_mut());
        for ((layer, (m_layer, v_layer)), g_layer) in layers.zip(moments).zip(grads.layers().iter())
        {
            let update = |p: &mut [T], m: &mut [T], v: &mut [T], g: &[T]| {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (one - b1) * g[i];
                    v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                    let m_hat = m[i] / corr1;
                    let v_hat = v[i] / corr2;
                    p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
                }
            };
            update(
                layer.weight.as_mut_slice(),
                m_layer.weight.as_mut_slice(),
                v_layer.weight.as_mut_slice(),
                g_layer.weight.as_slice(),
            );
            update(
                &mut layer.bias,
                &mut m_layer.bias,
                &mut v_layer.bias,
                &g_layer.bias,
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    /// Epochs without improvement tolerated before reducing.
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl PlateauConfig {
    /// Patience 5, factor 0.5, floor at `lr / 100`.
    pub fn for_lr(lr: f64) -> Self {
        Self {
            patience: 5,
            factor: 0.5,
            min_lr: lr / 100.0,
        }
    }
}

/// Whether the monitored metric should go up or down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauMode {
    Max,
    Min,
}

/// Reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    config: PlateauConfig,
    mode: PlateauMode,
    lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
    reductions: usize,
}

impl PlateauScheduler {
    /// Scheduler for a metric where larger is better (e.g. accuracy).
    pub fn new(lr: f64, config: PlateauConfig) -> Result<Self> {
        Self::with_mode(lr, config, PlateauMode::Max)
    }

    pub fn with_mode(lr: f64, config: PlateauConfig, mode: PlateauMode) -> Result<Self> {
        if !(config.factor > 0.0 && config.factor < 1.0) {
            return Err(Error::param(format!(
                "plateau factor must lie in (0, 1), got {}",
                config.factor
            )));
        }
        if !(lr > 0.0) || config.min_lr < 0.0 || config.min_lr > lr {
            return Err(Error::param("plateau scheduler needs 0 <= min_lr <= lr"));
        }
        Ok(Self {
            config,
            mode,
            lr,
            best: None,
            bad_epochs: 0,
            reductions: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn config(&self) -> PlateauConfig {
        self.config
    }

    pub fn mode(&self) -> PlateauMode {
        self.mode
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }

    /// Records one epoch's metric and returns the learning rate for the next epoch.
    pub fn step(&mut self, metric: f64) -> f64 {
        let improved = |best: f64| match self.mode {
            PlateauMode::Max => metric > best,
            PlateauMode::Min => metric < best,
        };
        match self.best {
            Some(best) if !improved(best) => self.bad_epochs += 1,
            _ => {
                self.best = Some(metric);
                self.bad_epochs = 0;
            }
        }
        if self.bad_epochs >= self.config.patience {
            let reduced = (self.lr * self.config.factor).max(self.config.min_lr);
            if reduced < self.lr {
                self.lr = reduced;
                self.reductions += 1;
            }
            self.bad_epochs = 0;
        }
        self.lr
    }
}
