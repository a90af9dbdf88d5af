//! MuonAdamW: Newton–Schulz orthogonalized momentum for block matrices, AdamW
//! for everything else, plus the LR and weight-decay schedules.

use serde::{Deserialize, Serialize};

use crate::config::HpConfig;
use crate::model::{ModelParams, ParamKind};
use crate::tensor::{matmul, Tensor};

pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);
pub const NS_ITERS: usize = 5;
pub const MUON_MOMENTUM: f64 = 0.95;
pub const MUON_NESTEROV: bool = false;
pub const ADAM_EPS: f64 = 1e-8;

/// Quintic Newton–Schulz iteration towards the orthogonal polar factor of `m`.
///
/// The input is divided by its Frobenius norm first, so `m` and `k·m` (k > 0)
/// give the same result. A zero matrix maps to zero.
pub fn newton_schulz_orthogonalize(m: &Tensor, iters: usize) -> Tensor {
    let norm = m.frobenius_norm();
    if norm == 0.0 || !norm.is_finite() {
        return Tensor::zeros(m.rows, m.cols);
    }
    let (a, b, c) = NS_COEFFS;
    let tall = m.rows > m.cols;
    let mut x = if tall { m.transpose() } else { m.clone() };
    x.scale(1.0 / norm);
    for _ in 0..iters {
        let xt = x.transpose();
        let gram = matmul(&x, &xt);
        let gram2 = matmul(&gram, &gram);
        let mut poly = gram;
        poly.scale(b);
        poly.add_scaled(&gram2, c);
        let mut next = matmul(&poly, &x);
        next.add_scaled(&x, a);
        x = next;
    }
    if tall {
        x.transpose()
    } else {
        x
    }
}

/// `buf ← μ·buf + grad; param ← param − lr·√max(1, rows/cols)·NS(buf)`.
pub fn muon_step(param: &mut Tensor, grad: &Tensor, buf: &mut Tensor, lr: f64, momentum_coef: f64) {
    buf.scale(momentum_coef);
    buf.add_scaled(grad, 1.0);
    let update = newton_schulz_orthogonalize(buf, NS_ITERS);
    let aspect = (param.rows as f64 / param.cols as f64).max(1.0).sqrt();
    param.add_scaled(&update, -lr * aspect);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub exp_avg: Tensor,
    pub exp_avg_sq: Tensor,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(t: &Tensor) -> Self {
        Self { exp_avg: Tensor::zeros(t.rows, t.cols), exp_avg_sq: Tensor::zeros(t.rows, t.cols), step: 0 }
    }
}

/// Bias-corrected AdamW with decoupled decay:
/// `param ← param·(1 − lr·wd) − lr·m̂/(√v̂ + eps)`.
pub fn adamw_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f64, betas: (f64, f64), weight_decay: f64) {
    let (b1, b2) = betas;
    state.step += 1;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let shrink = 1.0 - lr * weight_decay;
    for i in 0..param.data.len() {
        let g = grad.data[i];
        let m = b1 * state.exp_avg.data[i] + (1.0 - b1) * g;
        let v = b2 * state.exp_avg_sq.data[i] + (1.0 - b2) * g * g;
        state.exp_avg.data[i] = m;
        state.exp_avg_sq.data[i] = v;
        let update = (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
        param.data[i] = param.data[i] * shrink - lr * update;
    }
}

/// Constant, then a linear warmdown reaching 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmdown_ratio: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step as f64 / total_steps as f64;
    if frac < 1.0 - warmdown_ratio {
        base_lr
    } else if warmdown_ratio <= 0.0 {
        0.0
    } else {
        base_lr * ((1.0 - frac) / warmdown_ratio).max(0.0)
    }
}

/// `base_wd · (1 − step/total_steps)`
pub fn wd_at(step: usize, total_steps: usize, base_wd: f64) -> f64 {
    if total_steps == 0 {
        return base_wd;
    }
    base_wd * (1.0 - step as f64 / total_steps as f64).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Muon,
    AdamW,
}

/// Which LR applies to a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrGroup {
    Embedding,
    Unembedding,
    Matrix,
    Scalar,
}

pub fn group_of(kind: ParamKind) -> Group {
    match kind {
        ParamKind::Matrix => Group::Muon,
        _ => Group::AdamW,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SlotState {
    Muon { momentum: Tensor },
    AdamW(AdamState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub kind: ParamKind,
    pub lr_group: LrGroup,
    pub decays: bool,
    pub state: SlotState,
}

impl ParamSlot {
    pub fn group(&self) -> Group {
        match self.state {
            SlotState::Muon { .. } => Group::Muon,
            SlotState::AdamW(_) => Group::AdamW,
        }
    }
}

/// Per-parameter optimizer buffers, aligned with [`ModelParams::named`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub slots: Vec<ParamSlot>,
}

impl OptimState {
    pub fn new(params: &ModelParams) -> Self {
        let tied = params.unembedding.is_none();
        let slots = params
            .named()
            .into_iter()
            .map(|(name, t)| {
                let kind = ParamKind::of(&name);
                let lr_group = match kind {
                    ParamKind::Matrix => LrGroup::Matrix,
                    ParamKind::Embedding if tied && name == "token_embedding" => LrGroup::Unembedding,
                    ParamKind::Embedding => LrGroup::Embedding,
                    ParamKind::Unembedding => LrGroup::Unembedding,
                    ParamKind::Gain | ParamKind::Scalar => LrGroup::Scalar,
                };
                let decays = matches!(kind, ParamKind::Matrix | ParamKind::Embedding | ParamKind::Unembedding);
                let state = match group_of(kind) {
                    Group::Muon => SlotState::Muon { momentum: Tensor::zeros(t.rows, t.cols) },
                    Group::AdamW => SlotState::AdamW(AdamState::zeros_like(t)),
                };
                ParamSlot { name, kind, lr_group, decays, state }
            })
            .collect();
        Self { slots }
    }

    /// Applies one optimizer step at schedule position `step` of `total_steps`.
    /// Slots with `frozen[i] = true` are skipped entirely (parameter and buffers).
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        hp: &HpConfig,
        step: usize,
        total_steps: usize,
        frozen: Option<&[bool]>,
    ) {
        let wd = wd_at(step, total_steps, hp.weight_decay);
        let grads = grads.named();
        for (i, ((name, p), slot)) in params.named_mut().into_iter().zip(self.slots.iter_mut()).enumerate() {
            debug_assert_eq!(name, slot.name);
            if frozen.is_some_and(|f| f[i]) {
                continue;
            }
            let base = match slot.lr_group {
                LrGroup::Embedding => hp.lr_embedding,
                LrGroup::Unembedding => hp.lr_unembedding,
                LrGroup::Matrix => hp.lr_matrix,
                LrGroup::Scalar => hp.lr_scalar,
            };
            let lr = lr_at(step, total_steps, base, hp.warmdown_ratio);
            let decay = if slot.decays { wd } else { 0.0 };
            let g = grads[i].1;
            match &mut slot.state {
                SlotState::Muon { momentum } => {
                    if decay != 0.0 {
                        p.scale(1.0 - lr * decay);
                    }
                    muon_step(p, g, momentum, lr, MUON_MOMENTUM);
                }
                SlotState::AdamW(state) => {
                    adamw_step(p, g, state, lr, (hp.adam_beta1, hp.adam_beta2), decay);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ArchConfig;

    fn poly(s: f64) -> f64 {
        let (a, b, c) = NS_COEFFS;
        a * s + b * s.powi(3) + c * s.powi(5)
    }

    #[test]
    fn zero_matrix_passthrough() {
        let z = Tensor::zeros(3, 5);
        assert_eq!(newton_schulz_orthogonalize(&z, 5), z);
    }

    #[test]
    fn identity_one_iteration() {
        let out = newton_schulz_orthogonalize(&Tensor::identity(1), 1);
        assert!((out.data[0] - 0.7010).abs() < 1e-12);
        // n x n identity is first scaled to I/sqrt(n)
        let n = 4;
        let out = newton_schulz_orthogonalize(&Tensor::identity(n), 1);
        let expect = poly(1.0 / (n as f64).sqrt());
        for r in 0..n {
            for c in 0..n {
                let want = if r == c { expect } else { 0.0 };
                assert!((out.get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scale_invariance() {
        let m = Tensor::from_vec(3, 4, (0..12).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect());
        let mut m2 = m.clone();
        m2.scale(2.0);
        let a = newton_schulz_orthogonalize(&m, 5);
        let b = newton_schulz_orthogonalize(&m2, 5);
        assert!(a.max_abs_diff(&b) <= 1e-12 * a.frobenius_norm());
    }

    #[test]
    fn tall_matches_transposed_wide() {
        let m = Tensor::from_vec(5, 2, (0..10).map(|i| (i as f64 * 0.7).sin()).collect());
        let a = newton_schulz_orthogonalize(&m, 5);
        let b = newton_schulz_orthogonalize(&m.transpose(), 5).transpose();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn muon_two_by_two_scalar_trace() {
        // diag(3, 4): Frobenius norm 5, so singular values start at 0.6 and 0.8 and
        // each iteration maps s -> a s + b s^3 + c s^5 independently.
        let grad = Tensor::from_vec(2, 2, vec![3.0, 0.0, 0.0, 4.0]);
        let mut param = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let mut buf = Tensor::zeros(2, 2);
        muon_step(&mut param, &grad, &mut buf, 0.1, 0.95);
        let (mut s1, mut s2) = (0.6, 0.8);
        for _ in 0..5 {
            s1 = poly(s1);
            s2 = poly(s2);
        }
        let want = [1.0 - 0.1 * s1, 2.0, 3.0, 4.0 - 0.1 * s2];
        for (p, w) in param.data.iter().zip(want) {
            assert!((p - w).abs() < 1e-12, "{p} vs {w}");
        }
        assert_eq!(buf, grad);
    }

    #[test]
    fn muon_zero_grad_and_zero_lr() {
        let mut p = Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let orig = p.clone();
        let mut buf = Tensor::zeros(2, 3);
        muon_step(&mut p, &Tensor::zeros(2, 3), &mut buf, 0.04, 0.95);
        assert_eq!(p, orig);
        let g = Tensor::filled(2, 3, 1.0);
        muon_step(&mut p, &g, &mut buf, 0.0, 0.95);
        assert_eq!(p, orig);
        assert_eq!(buf, g);
        muon_step(&mut p, &g, &mut buf, 0.0, 0.95);
        assert!((buf.data[0] - 1.95).abs() < 1e-15);
    }

    #[test]
    fn muon_tall_aspect_scaling() {
        let g = Tensor::from_vec(4, 1, vec![1.0, 0.0, 0.0, 0.0]);
        let mut p = Tensor::zeros(4, 1);
        let mut buf = Tensor::zeros(4, 1);
        muon_step(&mut p, &g, &mut buf, 1.0, 0.0);
        let mut s = 1.0;
        for _ in 0..5 {
            s = poly(s);
        }
        assert!((p.data[0] + 2.0 * s).abs() < 1e-12);
    }

    #[test]
    fn adamw_zero_everything_is_identity() {
        let mut p = Tensor::from_vec(1, 3, vec![0.3, -0.2, 1.0]);
        let orig = p.clone();
        let mut st = AdamState::zeros_like(&p);
        adamw_step(&mut p, &Tensor::zeros(1, 3), &mut st, 0.1, (0.8, 0.95), 0.0);
        assert_eq!(p, orig);
    }

    #[test]
    fn adamw_first_step_closed_form() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        let g = [2.5, -0.01, 1e-3];
        let mut p = Tensor::zeros(1, 3);
        let mut st = AdamState::zeros_like(&p);
        adamw_step(&mut p, &Tensor::from_vec(1, 3, g.to_vec()), &mut st, 0.01, (0.8, 0.95), 0.0);
        for (pi, gi) in p.data.iter().zip(g) {
            let want = -0.01 * gi / (gi.abs() + ADAM_EPS);
            assert!((pi - want).abs() < 1e-15);
            assert!(pi.signum() == -gi.signum());
        }
    }

    #[test]
    fn adamw_pure_decay() {
        let mut p = Tensor::from_vec(1, 2, vec![2.0, -4.0]);
        let mut st = AdamState::zeros_like(&p);
        adamw_step(&mut p, &Tensor::zeros(1, 2), &mut st, 0.1, (0.8, 0.95), 0.2);
        assert!((p.data[0] - 2.0 * 0.98).abs() < 1e-15);
        assert!((p.data[1] + 4.0 * 0.98).abs() < 1e-15);
    }

    #[test]
    fn schedules() {
        assert_eq!(lr_at(0, 100, 0.04, 0.5), 0.04);
        assert_eq!(lr_at(100, 100, 0.04, 0.5), 0.0);
        assert!((lr_at(75, 100, 0.04, 0.5) - 0.02).abs() < 1e-15);
        assert_eq!(lr_at(49, 100, 0.04, 0.5), 0.04);
        assert_eq!(wd_at(0, 100, 0.2), 0.2);
        assert_eq!(wd_at(100, 100, 0.2), 0.0);
        assert!((wd_at(50, 100, 0.2) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn group_partition_by_name() {
        let arch = ArchConfig { residual_scaling: crate::config::ResidualScaling::LearnedPerLayer, ..ArchConfig::desk(16) };
        let params = ModelParams::init(&arch, 11, 0);
        let st = OptimState::new(&params);
        assert_eq!(st.slots.len(), params.named().len());
        for slot in &st.slots {
            let leaf = slot.name.rsplit('.').next().unwrap();
            let is_block_matrix = ["attn_q", "attn_k", "attn_v", "attn_o", "mlp_in", "mlp_out"].contains(&leaf);
            assert_eq!(slot.group() == Group::Muon, is_block_matrix, "{}", slot.name);
            let (SlotState::Muon { momentum: b } | SlotState::AdamW(AdamState { exp_avg: b, .. })) = &slot.state;
            let shape = params.named().into_iter().find(|(n, _)| *n == slot.name).unwrap().1.shape();
            assert_eq!(b.shape(), shape);
        }
    }

    #[test]
    fn zero_grad_step_is_identity_without_decay() {
        let arch = ArchConfig::desk(16);
        let mut params = ModelParams::init(&arch, 11, 3);
        let orig = params.clone();
        let grads = params.zeros_like();
        let mut st = OptimState::new(&params);
        let hp = HpConfig { weight_decay: 0.0, ..HpConfig::desk(16) };
        for s in 0..3 {
            st.step(&mut params, &grads, &hp, s, 10, None);
        }
        assert_eq!(params, orig);
    }
}
