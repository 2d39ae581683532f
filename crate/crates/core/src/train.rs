//! Mini-batch training loop shared by client training and distillation.

use crate::error::Result;
use crate::matrix::Matrix;
use crate::nn::{loss_and_grad, MlpModel, ParamVector, Sgd, SgdConfig};
use crate::rng::RngStream;

/// Optimizer steps in one pass over `n` examples (last partial batch kept).
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

pub(crate) struct Loop<'a> {
    pub features: &'a Matrix,
    pub targets: &'a Matrix,
    pub cfg: &'a SgdConfig,
    pub anchor: Option<&'a ParamVector>,
}

impl Loop<'_> {
    /// Runs exactly `steps` momentum-SGD steps. The data is reshuffled at the
    /// start of each epoch; `step_size(t)` gives the rate for global step `t`
    /// and `after_step(t, params)` observes the weights after each update.
    pub fn run(
        &self,
        model: &mut MlpModel,
        steps: usize,
        rng: &mut RngStream,
        step_size: impl Fn(usize) -> f64,
        mut after_step: impl FnMut(usize, &ParamVector),
    ) -> Result<()> {
        let n = self.features.rows();
        if steps == 0 || n == 0 {
            return Ok(());
        }
        let mut opt = Sgd::new(model.params().len(), self.cfg.momentum);
        let mut t = 0;
        'epochs: loop {
            let order = rng.permutation(n);
            for batch in order.chunks(self.cfg.batch_size) {
                let x = self.features.select_rows(batch);
                let y = self.targets.select_rows(batch);
                let (_, grad) = loss_and_grad(model, &x, &y, self.anchor, self.cfg)?;
                opt.step(model.params_mut(), &grad, step_size(t))?;
                after_step(t, model.params());
                t += 1;
                if t == steps {
                    break 'epochs;
                }
            }
        }
        Ok(())
    }
}
