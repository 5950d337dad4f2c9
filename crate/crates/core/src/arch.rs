//! Parameter and FLOP accounting for a routed transformer.
//!
//! Dense per-token parameters, per layer (embeddings excluded):
//!
//! ```text
//! attention  q, k, v, o          4 · d_model · n_heads · kv_size
//! relative-position projection   1 · d_model · n_heads · kv_size
//! feed-forward (d_ffw = 4·d)     8 · d_model²
//! two layer norms (scale, bias)  4 · d_model
//! ```
//!
//! This reproduces every "actual # params" entry of the reference
//! architecture table exactly.

use crate::math::round;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchSpec {
    pub name: alloc::string::String,
    pub d_model: u64,
    pub n_layers: u64,
    pub n_heads: u64,
    pub kv_size: u64,
    pub vocab: u64,
}

impl ArchSpec {
    pub fn new(name: &str, d_model: u64, n_layers: u64, n_heads: u64, kv_size: u64, vocab: u64) -> Result<Self> {
        let a = ArchSpec { name: name.into(), d_model, n_layers, n_heads, kv_size, vocab };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.d_model, self.n_layers, self.n_heads, self.kv_size, self.vocab].contains(&0) {
            return Err(Error::InvalidShape(alloc::format!(
                "architecture `{}` has a zero dimension",
                self.name
            )));
        }
        Ok(())
    }

    pub fn d_ffw(&self) -> u64 {
        4 * self.d_model
    }

    /// Parameters of one feed-forward block; this is what one expert holds.
    pub fn ffw_params(&self) -> u64 {
        2 * self.d_model * self.d_ffw()
    }

    pub fn attention_params(&self) -> u64 {
        5 * self.d_model * self.n_heads * self.kv_size
    }

    pub fn norm_params(&self) -> u64 {
        4 * self.d_model
    }

    pub fn layer_params(&self) -> u64 {
        self.attention_params() + self.ffw_params() + self.norm_params()
    }

    /// Dense parameter count `N`.
    pub fn dense_params(&self) -> u64 {
        self.n_layers * self.layer_params()
    }
}

/// Routing configuration of a model: `E` experts, `K` of them per token, and a
/// fraction `R` of layers routed.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoutingShape {
    pub experts: u64,
    pub top_k: u64,
    pub frequency: f64,
}

impl RoutingShape {
    pub fn new(experts: u64, top_k: u64, frequency: f64) -> Result<Self> {
        let s = RoutingShape { experts, top_k, frequency };
        if experts == 0 || top_k == 0 || top_k > experts {
            return Err(Error::InvalidShape(alloc::format!(
                "need 1 <= K <= E, got K={top_k}, E={experts}"
            )));
        }
        if !(frequency > 0.0 && frequency <= 1.0) {
            return Err(Error::InvalidShape(alloc::format!(
                "routing frequency must be in (0, 1], got {frequency}"
            )));
        }
        Ok(s)
    }

    pub fn dense() -> Self {
        RoutingShape { experts: 1, top_k: 1, frequency: 0.5 }
    }

    /// `round(R · n_layers)`.
    pub fn routed_layers(&self, arch: &ArchSpec) -> u64 {
        round(self.frequency * arch.n_layers as f64) as u64
    }
}

/// Output of [`param_flop_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostModel {
    /// Dense per-token parameter count.
    pub n: f64,
    /// Total parameter count including every expert.
    pub p: f64,
    /// TeraFLOPs per token forward pass.
    pub f_tflops: f64,
    /// `P / F` with `F` in TeraFLOPs.
    pub b: f64,
}

impl CostModel {
    /// `P / F` with `F` in FLOPs: `1/2` for a dense model. This is the routing
    /// variable consumed by the FLOP/parameter law.
    pub fn utilization(&self) -> f64 {
        self.b / 1e12
    }
}

/// `(N, P, F, B)` for an architecture and routing shape.
pub fn param_flop_model(arch: &ArchSpec, shape: &RoutingShape) -> Result<CostModel> {
    arch.validate()?;
    RoutingShape::new(shape.experts, shape.top_k, shape.frequency)?;
    let routed = shape.routed_layers(arch);
    if shape.experts > 1 && routed == 0 {
        return Err(Error::InvalidShape(alloc::format!(
            "R = {} routes no layer of a {}-layer model",
            shape.frequency, arch.n_layers
        )));
    }
    let n = arch.dense_params() as f64;
    let routed_ffw = (routed * arch.ffw_params()) as f64;
    let p = n + (shape.experts - 1) as f64 * routed_ffw;
    let f_tflops = 2.0 * (n + (shape.top_k - 1) as f64 * routed_ffw) / 1e12;
    Ok(CostModel { n, p, f_tflops, b: p / f_tflops })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m15() -> ArchSpec {
        ArchSpec::new("15M", 512, 6, 8, 32, 32_000).unwrap()
    }

    #[test]
    fn dense_count_matches_reference_row() {
        assert_eq!(m15().dense_params(), 16_527_360);
    }

    #[test]
    fn dense_shape_is_identity() {
        let c = param_flop_model(&m15(), &RoutingShape::new(1, 1, 0.5).unwrap()).unwrap();
        assert_eq!(c.p, c.n);
        assert_eq!(c.b, c.n / (2.0 * c.n / 1e12));
        assert!((c.utilization() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn routed_total_params() {
        // 3 routed layers × 2·512·2048 = 6,291,456 per extra expert.
        let c = param_flop_model(&m15(), &RoutingShape::new(64, 1, 0.5).unwrap()).unwrap();
        assert_eq!(c.p, 16_527_360.0 + 63.0 * 6_291_456.0);
        assert_eq!(c.f_tflops, 2.0 * 16_527_360.0 / 1e12);
    }

    #[test]
    fn top_k_raises_flops() {
        let c = param_flop_model(&m15(), &RoutingShape::new(8, 2, 0.5).unwrap()).unwrap();
        assert_eq!(c.f_tflops, 2.0 * (16_527_360.0 + 6_291_456.0) / 1e12);
    }

    #[test]
    fn invalid_shapes() {
        assert!(RoutingShape::new(4, 5, 0.5).is_err());
        assert!(RoutingShape::new(4, 1, 0.0).is_err());
        let tiny = ArchSpec::new("tiny", 8, 1, 1, 8, 10).unwrap();
        let shape = RoutingShape::new(4, 1, 0.25).unwrap();
        assert!(matches!(param_flop_model(&tiny, &shape), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn p_and_b_affine_in_e() {
        let ps: alloc::vec::Vec<CostModel> = [1u64, 2, 3, 10]
            .iter()
            .map(|&e| param_flop_model(&m15(), &RoutingShape::new(e, 1, 0.5).unwrap()).unwrap())
            .collect();
        let slope = ps[1].p - ps[0].p;
        assert!(slope > 0.0);
        assert_eq!(ps[2].p - ps[1].p, slope);
        assert_eq!(ps[3].p - ps[0].p, 9.0 * slope);
        let bslope = ps[1].b - ps[0].b;
        assert!(((ps[3].b - ps[0].b) / bslope - 9.0).abs() < 1e-9);
    }
}
