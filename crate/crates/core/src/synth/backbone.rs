use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn;
use crate::tensor::{Binder, ParamStore, Tensor, Var};

/// Two 3×3 convolutions with ReLU, optional 2× average pooling in between,
/// then a per-cell linear map to the output width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub prefix: String,
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
    pub pool: bool,
}

impl Backbone {
    pub fn camera(in_channels: usize, hidden: usize, out_channels: usize) -> Self {
        Backbone {
            prefix: "backbone.cam".into(),
            in_channels,
            hidden,
            out_channels,
            pool: true,
        }
    }

    pub fn lidar(in_channels: usize, hidden: usize, out_channels: usize) -> Self {
        Backbone {
            prefix: "backbone.lidar".into(),
            in_channels,
            hidden,
            out_channels,
            pool: false,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let (ci, h) = (self.in_channels, self.hidden);
        let p = &self.prefix;
        store.insert(format!("{p}.conv1.kernel"), nn::xavier(rng, &[3, 3, ci, h], 9 * ci, 9 * h))?;
        store.insert(format!("{p}.conv1.bias"), Tensor::zeros(&[h]))?;
        store.insert(format!("{p}.conv2.kernel"), nn::xavier(rng, &[3, 3, h, h], 9 * h, 9 * h))?;
        store.insert(format!("{p}.conv2.bias"), Tensor::zeros(&[h]))?;
        nn::init_linear(store, rng, &format!("{p}.proj"), h, self.out_channels)
    }

    /// `[H, W, C_in]` → `[H/2, W/2, C_out]` with pooling, else `[H, W, C_out]`.
    pub fn forward<'t>(&self, bind: &Binder<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let p = &self.prefix;
        let conv = |x: Var<'t>, k: &str| -> Result<Var<'t>> {
            Ok(x.conv2d_3x3(bind.get(&format!("{p}.{k}.kernel"))?, bind.get(&format!("{p}.{k}.bias"))?)?
                .relu())
        };
        let mut y = conv(x, "conv1")?;
        if self.pool {
            y = y.avg_pool2()?;
        }
        let y = conv(y, "conv2")?;
        nn::linear(bind, y, &format!("{p}.proj"))
    }
}
