use crate::error::{DeconvError, Result};
use crate::image::{FilterBank, Kernel};

/// The stacked data/prior operator `L = [k; √μ·F]` of the HQS x-update.
///
/// Row 0 is the blur kernel; row `i ≥ 1` is the `i`-th prior filter scaled by
/// its bank weight and `√μ`. A missing prior leaves only the blur row.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedOperator {
    blur: Kernel,
    prior: Vec<Kernel>,
    mu: f64,
}

impl StackedOperator {
    pub fn new(blur: Kernel, prior: Option<&FilterBank>, mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(DeconvError::InvalidParameter(format!("mu must be finite and >= 0, got {mu}")));
        }
        let prior = prior.map(FilterBank::weighted_kernels).unwrap_or_default();
        Ok(Self { blur, prior, mu })
    }

    /// `L = [k; √μ ∇x; √μ ∇y]`, the TV-ℓ1 setting.
    pub fn with_gradient_prior(blur: Kernel, mu: f64) -> Result<Self> {
        Self::new(blur, Some(&FilterBank::gradient()), mu)
    }

    pub fn blur(&self) -> &Kernel {
        &self.blur
    }

    /// Prior filters with bank weights applied, without the `√μ` factor.
    pub fn prior(&self) -> &[Kernel] {
        &self.prior
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Number of stacked rows, `1 + n`.
    pub fn len(&self) -> usize {
        1 + self.prior.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The rows of `L` as kernels, `√μ` folded into the prior rows.
    pub fn rows(&self) -> Vec<Kernel> {
        let s = self.mu.sqrt();
        std::iter::once(self.blur.clone()).chain(self.prior.iter().map(|k| k.scale(s))).collect()
    }

    /// Same prior and μ with a different blur kernel.
    pub fn with_blur(&self, blur: Kernel) -> Self {
        Self { blur, prior: self.prior.clone(), mu: self.mu }
    }
}
