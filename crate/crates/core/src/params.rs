use serde::{Deserialize, Serialize};

use crate::error::{PdaError, Result};
use crate::tensor::Matrix;

/// Default metric temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
/// Default EMA momentum for prototype updates.
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Logit-space fusion weights for the metric, classifier and PCB branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl FusionWeights {
    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    /// Metric branch only.
    pub const fn metric_only() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    /// Classifier branch only.
    pub const fn classifier_only() -> Self {
        Self::new(0.0, 1.0, 0.0)
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self::new(0.1, 0.9, 0.0)
    }
}

/// Learnable and configured parameters of the metric head.
#[derive(Debug, Clone, PartialEq)]
pub struct PdaParams {
    /// Square projection `W`, identity at construction.
    pub projection: Matrix,
    /// `lambda`; the metric scale is `exp(lambda)`.
    pub log_scale: f64,
    pub bg_bias: f64,
    temperature: f64,
    momentum: f64,
    pub fusion: FusionWeights,
    pub use_align: bool,
    /// Warp once per class with that class's best slot instead of once globally.
    pub align_per_class: bool,
    pub freeze_mem: bool,
}

impl PdaParams {
    /// Identity projection, unit scale, zero background bias, default temperature and momentum.
    pub fn new(dim: usize) -> Self {
        Self {
            projection: Matrix::identity(dim),
            log_scale: 0.0,
            bg_bias: 0.0,
            temperature: DEFAULT_TEMPERATURE,
            momentum: DEFAULT_MOMENTUM,
            fusion: FusionWeights::default(),
            use_align: false,
            align_per_class: false,
            freeze_mem: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn with_temperature(mut self, tau: f64) -> Result<Self> {
        self.set_temperature(tau)?;
        Ok(self)
    }

    pub fn with_momentum(mut self, m: f64) -> Result<Self> {
        self.set_momentum(m)?;
        Ok(self)
    }

    pub fn set_temperature(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(PdaError::NonPositiveTemperature(tau));
        }
        self.temperature = tau;
        Ok(())
    }

    pub fn set_momentum(&mut self, m: f64) -> Result<()> {
        if !(0.0..1.0).contains(&m) {
            return Err(PdaError::InvalidMomentum(m));
        }
        self.momentum = m;
        Ok(())
    }

    pub fn set_projection(&mut self, w: Matrix) -> Result<()> {
        if w.rows() != w.cols() {
            return Err(PdaError::dims("square projection", w.rows(), w.cols()));
        }
        self.projection = w;
        Ok(())
    }
}
