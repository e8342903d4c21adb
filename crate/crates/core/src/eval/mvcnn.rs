//! View-pooling CNN head: element-wise max across views, two 3×3 conv
//! layers, global average pooling and a linear layer to label logits.
//!
//! Applied to a single view it doubles as the per-view CNN classifier.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{constant, join, uniform, Conv2dSpec, Parameters, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MvcnnConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub n_labels: usize,
}

impl MvcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden == 0 || self.n_labels == 0 {
            return Err(Error::config("mvcnn: in_channels, hidden and n_labels must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MvcnnHead {
    pub config: MvcnnConfig,
    pub conv1: Tensor,
    pub bias1: Tensor,
    pub conv2: Tensor,
    pub bias2: Tensor,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

pub fn init_mvcnn_head(config: &MvcnnConfig, seed: u64) -> Result<MvcnnHead> {
    config.validate()?;
    let mut r = rng::stream(seed, "init.mvcnn", 0);
    let (c, h, l) = (config.in_channels, config.hidden, config.n_labels);
    Ok(MvcnnHead {
        config: config.clone(),
        conv1: uniform(&mut r, &[h, c, 3, 3], (6.0 / (9 * c) as f64).sqrt(), true),
        bias1: constant(&[h], 0.0, true),
        conv2: uniform(&mut r, &[h, h, 3, 3], (6.0 / (9 * h) as f64).sqrt(), true),
        bias2: constant(&[h], 0.0, true),
        fc_w: uniform(&mut r, &[h, l], (6.0 / (h + l) as f64).sqrt(), true),
        fc_b: constant(&[l], 0.0, true),
    })
}

/// Element-wise maximum across per-view `C×G×G` maps.
pub fn view_pool(features: &[Tensor]) -> Result<Tensor> {
    if features.is_empty() {
        return Err(Error::contract("view pooling needs at least one view"));
    }
    if features[0].rank() != 3 {
        return Err(Error::dim(format!("view pooling expects C×G×G maps, got {:?}", features[0].shape())));
    }
    Tensor::max_stack(features)
}

impl MvcnnHead {
    /// `B×C×G×G` maps to `B×L` probabilities.
    pub fn classify_maps(&self, maps: &Tensor) -> Result<Tensor> {
        let same = Conv2dSpec { stride: 1, padding: 1 };
        maps.conv2d(&self.conv1, same)?
            .add_channel_bias(&self.bias1)?
            .relu()
            .conv2d(&self.conv2, same)?
            .add_channel_bias(&self.bias2)?
            .relu()
            .global_avg_pool()?
            .matmul(&self.fc_w)?
            .add_row_bias(&self.fc_b)
            .map(|t| t.sigmoid())
    }
}

/// View-pool then classify: `[L]` probabilities for one study.
pub fn mvcnn_forward(features: &[Tensor], head: &MvcnnHead) -> Result<Tensor> {
    let pooled = view_pool(features)?;
    let s = pooled.shape().to_vec();
    let probs = head.classify_maps(&pooled.reshape(&[1, s[0], s[1], s[2]])?)?;
    probs.reshape(&[head.config.n_labels])
}

impl Parameters for MvcnnHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "conv1.kernel"), &self.conv1);
        f(join(prefix, "conv1.bias"), &self.bias1);
        f(join(prefix, "conv2.kernel"), &self.conv2);
        f(join(prefix, "conv2.bias"), &self.bias2);
        f(join(prefix, "fc.w"), &self.fc_w);
        f(join(prefix, "fc.b"), &self.fc_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "conv1.kernel"), &mut self.conv1);
        f(join(prefix, "conv1.bias"), &mut self.bias1);
        f(join(prefix, "conv2.kernel"), &mut self.conv2);
        f(join(prefix, "conv2.bias"), &mut self.bias2);
        f(join(prefix, "fc.w"), &mut self.fc_w);
        f(join(prefix, "fc.b"), &mut self.fc_b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{assert_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn maps(seed: u64, n: usize) -> Vec<Tensor> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| random_tensor(&mut r, &[4, 3, 3], 1.0)).collect()
    }

    #[test]
    fn pooling_examples() {
        let a = maps(1, 1).pop().unwrap();
        assert_eq!(view_pool(&[a.clone(), a.clone(), a.clone()]).unwrap().data(), a.data());
        let ms = maps(2, 5);
        let pooled = view_pool(&ms).unwrap();
        for i in 0..pooled.numel() {
            let mut m = f64::NEG_INFINITY;
            for t in &ms {
                if t.data()[i] > m {
                    m = t.data()[i];
                }
            }
            assert_eq!(pooled.data()[i], m);
        }
        let mut rev = ms.clone();
        rev.reverse();
        assert_eq!(view_pool(&rev).unwrap().data(), pooled.data());
        assert!(view_pool(&[]).is_err());
        assert!(matches!(view_pool(&[ms[0].clone(), Tensor::zeros(&[4, 2, 2])]), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_head_gives_one_half() {
        let cfg = MvcnnConfig { in_channels: 4, hidden: 5, n_labels: 3 };
        let mut head = init_mvcnn_head(&cfg, 0).unwrap();
        head.fc_w = Tensor::zeros(head.fc_w.shape());
        let p = mvcnn_forward(&maps(3, 2), &head).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn head_gradients() {
        let cfg = MvcnnConfig { in_channels: 4, hidden: 3, n_labels: 2 };
        let head = init_mvcnn_head(&cfg, 1).unwrap();
        let ms = maps(4, 3);
        let target = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        let mut inputs: Vec<Tensor> = head.named("").into_iter().map(|(_, t)| t).collect();
        inputs.extend(ms.iter().cloned());
        assert_gradients(&inputs, |ts| {
            let mut h = head.clone();
            let mut it = ts.iter();
            h.visit_mut("", &mut |_, t| *t = it.next().unwrap().clone());
            let views: Vec<Tensor> = it.cloned().collect();
            mvcnn_forward(&views, &h)?.bce(&target)
        });
    }
}
