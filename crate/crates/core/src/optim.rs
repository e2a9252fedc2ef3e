//! OvSW (adaptive gradient scaling + silence-aware decay), plus vanilla SGD-momentum
//! and LARS baselines, and the cosine learning-rate schedule.
//!
//! Parameters live in the [`Model`]; the optimizer keeps one [`ParamSlot`] of state
//! per parameter tensor, in [`Model::param_info`] order.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::binops::sign;
use crate::container::{find, Record};
use crate::error::{Error, Result};
use crate::network::Model;
pub use crate::network::ParamKind;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OvswConfig {
    pub base_lr: f64,
    pub total_steps: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ags_lambda: f64,
    pub sad_sigma: f64,
    pub ema_momentum: f64,
    pub sad_penalty: f64,
    pub ags_enabled: bool,
    pub sad_enabled: bool,
    pub lars_eta: f64,
}

impl Default for OvswConfig {
    fn default() -> Self {
        Self::cifar()
    }
}

impl OvswConfig {
    /// Small-dataset recipe: λ = 0.04, σ = 9e-4.
    pub fn cifar() -> Self {
        Self {
            base_lr: 0.1,
            total_steps: 1,
            momentum: 0.9,
            weight_decay: 5e-4,
            ags_lambda: 0.04,
            sad_sigma: 9e-4,
            ema_momentum: 0.99,
            sad_penalty: 1e-4,
            ags_enabled: true,
            sad_enabled: true,
            lars_eta: 0.04,
        }
    }

    /// Large-dataset recipe: λ = 0.02, σ = 2e-5.
    pub fn imagenet() -> Self {
        Self {
            ags_lambda: 0.02,
            sad_sigma: 2e-5,
            weight_decay: 1e-4,
            ..Self::cifar()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "cifar" | "cifar10" => Some(Self::cifar()),
            "imagenet" => Some(Self::imagenet()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("optimizer config: {what}")))
            }
        };
        check(self.base_lr > 0.0 && self.base_lr.is_finite(), "base_lr must be > 0")?;
        check(self.total_steps >= 1, "total_steps must be >= 1")?;
        check((0.0..1.0).contains(&self.momentum), "momentum must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.ema_momentum), "ema_momentum must be in [0, 1)")?;
        check(self.weight_decay >= 0.0, "weight_decay must be >= 0")?;
        check(self.ags_lambda >= 0.0, "ags_lambda must be >= 0")?;
        check(self.sad_sigma >= 0.0, "sad_sigma must be >= 0")?;
        check(self.sad_penalty >= 0.0, "sad_penalty must be >= 0")?;
        check(self.lars_eta >= 0.0, "lars_eta must be >= 0")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Vanilla,
    Lars,
    Ovsw,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Vanilla => "vanilla",
            OptimizerKind::Lars => "lars",
            OptimizerKind::Ovsw => "ovsw",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" | "sgd" => Ok(Self::Vanilla),
            "lars" => Ok(Self::Lars),
            "ovsw" => Ok(Self::Ovsw),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Per-parameter optimizer state. `flip_state` and `prev_sign` exist only for
/// binarized weights. The flip EMA is kept in f64 so long scripted sequences stay
/// within 1e-9 of the closed-form recurrence.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub kind: ParamKind,
    pub velocity: Tensor,
    pub flip_state: Option<Vec<f64>>,
    pub prev_sign: Option<Tensor>,
}

impl ParamSlot {
    pub fn new(name: impl Into<String>, kind: ParamKind, param: &Tensor) -> Result<Self> {
        let binarized = kind == ParamKind::BinarizedWeight;
        Ok(Self {
            name: name.into(),
            kind,
            velocity: Tensor::zeros(param.shape()),
            flip_state: binarized.then(|| vec![0.0; param.len()]),
            prev_sign: if binarized { Some(sign(param)?) } else { None },
        })
    }
}

/// β(t) = β₀·½(1 + cos(πt/T)); `t` past `T` is clamped.
pub fn cosine_lr(t: u64, config: &OvswConfig) -> f32 {
    let total = config.total_steps.max(1);
    let t = t.min(total) as f64;
    (config.base_lr * 0.5 * (1.0 + (PI * t / total as f64).cos())) as f32
}

fn filter_len(t: &Tensor) -> usize {
    if t.ndim() <= 1 {
        1
    } else {
        t.shape()[1..].iter().product()
    }
}

/// Lifts each filter's gradient so that ‖G_k‖/‖W_k‖ ≥ λ, keeping its direction.
/// Filters with a zero gradient or zero weight are passed through unchanged.
pub fn ags_scale(g: &Tensor, w: &Tensor, lambda: f64) -> Result<Tensor> {
    if g.shape() != w.shape() {
        return Err(Error::shape("ags_scale", g.shape(), w.shape()));
    }
    let mut out = g.clone();
    if g.is_empty() {
        return Ok(out);
    }
    let inner = filter_len(w);
    for (go, wk) in out.data_mut().chunks_mut(inner).zip(w.data().chunks(inner)) {
        let gn = go.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let wn = wk.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if gn == 0.0 || wn == 0.0 {
            continue;
        }
        if gn / wn < lambda {
            let c = lambda * wn / gn;
            go.iter_mut().for_each(|v| *v = (*v as f64 * c) as f32);
        }
    }
    Ok(out)
}

/// S′ = m·S + (1−m)·[sign changed].
pub fn update_flip_state(s: &[f64], prev_sign: &Tensor, cur_sign: &Tensor, m: f64) -> Result<Vec<f64>> {
    if prev_sign.shape() != cur_sign.shape() || s.len() != prev_sign.len() {
        return Err(Error::shape("update_flip_state", prev_sign.shape(), cur_sign.shape()));
    }
    Ok(s.iter()
        .zip(prev_sign.data().iter().zip(cur_sign.data()))
        .map(|(&s, (&p, &c))| {
            let flipped = if p != c { 1.0 } else { 0.0 };
            m * s + (1.0 - m) * flipped
        })
        .collect())
}

/// Adds γ_pen·W to the gradient of weights whose flip state is strictly below σ.
pub fn sad_decay(g: &Tensor, w: &Tensor, s: &[f64], sigma: f64, penalty: f64) -> Result<Tensor> {
    if g.shape() != w.shape() || s.len() != g.len() {
        return Err(Error::shape("sad_decay", g.shape(), w.shape()));
    }
    let pen = penalty as f32;
    let mut out = g.clone();
    for ((o, &wv), &sv) in out.data_mut().iter_mut().zip(w.data()).zip(s) {
        if sv < sigma {
            *o += pen * wv;
        }
    }
    Ok(out)
}

fn check_inputs(params: &[&mut Tensor], slots: &[ParamSlot], grads: &[Tensor]) -> Result<()> {
    if params.len() != slots.len() || grads.len() != slots.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer step: {} params, {} slots, {} grads",
            params.len(),
            slots.len(),
            grads.len()
        )));
    }
    for ((p, s), g) in params.iter().zip(slots).zip(grads) {
        if p.shape() != g.shape() || p.shape() != s.velocity.shape() {
            return Err(Error::shape("optimizer step", p.shape(), g.shape()));
        }
        g.assert_finite(&format!("gradient of {}", s.name))?;
    }
    Ok(())
}

/// V ← m·V + (G + φ·W); W ← W − lr·V.
fn momentum_descent(w: &mut Tensor, v: &mut Tensor, g: &Tensor, momentum: f32, decay: f32, lr: f32) {
    for ((wv, vv), &gv) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
        *vv = momentum * *vv + (gv + decay * *wv);
        *wv -= lr * *vv;
    }
}

fn decay_for(kind: ParamKind, config: &OvswConfig) -> f32 {
    match kind {
        ParamKind::ScaleAlpha => 0.0,
        _ => config.weight_decay as f32,
    }
}

fn refresh_flip_state(w: &Tensor, slot: &mut ParamSlot, m: f64) -> Result<()> {
    if let (Some(s), Some(prev)) = (slot.flip_state.as_mut(), slot.prev_sign.as_mut()) {
        let cur = sign(w)?;
        *s = update_flip_state(s, prev, &cur, m)?;
        *prev = cur;
    }
    Ok(())
}

fn finish(w: &Tensor, slot: &mut ParamSlot, config: &OvswConfig) -> Result<()> {
    w.assert_finite(&format!("parameter {} after step", slot.name))?;
    refresh_flip_state(w, slot, config.ema_momentum)
}

/// Plain SGD momentum with weight decay (none on α). Flip state is still tracked.
pub fn vanilla_step(params: &mut [&mut Tensor], slots: &mut [ParamSlot], grads: &[Tensor], t: u64, config: &OvswConfig) -> Result<()> {
    check_inputs(params, slots, grads)?;
    let lr = cosine_lr(t, config);
    let m = config.momentum as f32;
    for ((w, slot), g) in params.iter_mut().zip(slots.iter_mut()).zip(grads) {
        momentum_descent(w, &mut slot.velocity, g, m, decay_for(slot.kind, config), lr);
        finish(w, slot, config)?;
    }
    Ok(())
}

/// OvSW: AGS then SAD on binarized weights, SGD momentum everywhere.
pub fn ovsw_step(params: &mut [&mut Tensor], slots: &mut [ParamSlot], grads: &[Tensor], t: u64, config: &OvswConfig) -> Result<()> {
    check_inputs(params, slots, grads)?;
    let lr = cosine_lr(t, config);
    let m = config.momentum as f32;
    for ((w, slot), g) in params.iter_mut().zip(slots.iter_mut()).zip(grads) {
        if slot.kind == ParamKind::BinarizedWeight {
            let mut g_eff = if config.ags_enabled {
                ags_scale(g, w, config.ags_lambda)?
            } else {
                g.clone()
            };
            if config.sad_enabled {
                let s = slot.flip_state.as_deref().expect("binarized slot carries flip state");
                g_eff = sad_decay(&g_eff, w, s, config.sad_sigma, config.sad_penalty)?;
            }
            momentum_descent(w, &mut slot.velocity, &g_eff, m, decay_for(slot.kind, config), lr);
        } else {
            momentum_descent(w, &mut slot.velocity, g, m, decay_for(slot.kind, config), lr);
        }
        finish(w, slot, config)?;
    }
    Ok(())
}

/// LARS on binarized weights: local rate η‖W‖/(‖G‖ + φ‖W‖) multiplies the step,
/// while the raw gradient goes into the momentum buffer. Other slots take plain SGD.
/// A binarized slot whose denominator is zero is skipped.
pub fn lars_step(params: &mut [&mut Tensor], slots: &mut [ParamSlot], grads: &[Tensor], t: u64, config: &OvswConfig) -> Result<()> {
    check_inputs(params, slots, grads)?;
    let lr = cosine_lr(t, config);
    let m = config.momentum as f32;
    for ((w, slot), g) in params.iter_mut().zip(slots.iter_mut()).zip(grads) {
        let decay = decay_for(slot.kind, config);
        if slot.kind == ParamKind::BinarizedWeight {
            let (wn, gn) = (w.norm(), g.norm());
            let denom = gn + config.weight_decay * wn;
            if denom == 0.0 {
                // Nothing moves, but the flip EMA still sees a no-flip step.
                finish(w, slot, config)?;
                continue;
            }
            let local = config.lars_eta * wn / denom;
            momentum_descent(w, &mut slot.velocity, g, m, decay, (lr as f64 * local) as f32);
        } else {
            momentum_descent(w, &mut slot.velocity, g, m, decay, lr);
        }
        finish(w, slot, config)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub config: OvswConfig,
    pub slots: Vec<ParamSlot>,
    /// Number of steps taken so far; the next step uses β(step).
    pub step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, config: OvswConfig, model: &Model) -> Result<Self> {
        config.validate()?;
        let slots = model
            .param_info()
            .into_iter()
            .zip(model.params())
            .map(|(info, p)| ParamSlot::new(info.name, info.kind, p))
            .collect::<Result<_>>()?;
        Ok(Self { kind, config, slots, step: 0 })
    }

    pub fn current_lr(&self) -> f32 {
        cosine_lr(self.step, &self.config)
    }

    /// Applies one update and returns the learning rate it used.
    pub fn step(&mut self, model: &mut Model, grads: &[Tensor]) -> Result<f32> {
        let lr = self.current_lr();
        let mut params = model.params_mut();
        let f = match self.kind {
            OptimizerKind::Vanilla => vanilla_step,
            OptimizerKind::Lars => lars_step,
            OptimizerKind::Ovsw => ovsw_step,
        };
        f(&mut params, &mut self.slots, grads, self.step, &self.config)?;
        self.step += 1;
        Ok(lr)
    }

    pub fn slot(&self, name: &str) -> Option<&ParamSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn meta(&self) -> Result<Value> {
        Ok(json!({
            "kind": self.kind,
            "config": serde_json::to_value(&self.config)?,
            "step": self.step,
        }))
    }

    pub fn records(&self, _model: &Model) -> Vec<Record> {
        let mut out = Vec::new();
        for s in &self.slots {
            let shape = s.velocity.shape();
            out.push(Record::f32(format!("optim.{}.velocity", s.name), shape, s.velocity.data()));
            if let Some(fs) = &s.flip_state {
                out.push(Record::f64(format!("optim.{}.flip_state", s.name), shape, fs));
            }
            if let Some(p) = &s.prev_sign {
                out.push(Record::f32(format!("optim.{}.prev_sign", s.name), shape, p.data()));
            }
        }
        out
    }

    pub fn from_records(meta: &Value, model: &Model, records: &[Record]) -> Result<Self> {
        let kind: OptimizerKind = serde_json::from_value(meta["kind"].clone())?;
        let config: OvswConfig = serde_json::from_value(meta["config"].clone())?;
        let step = meta["step"]
            .as_u64()
            .ok_or_else(|| Error::Format("optimizer step missing".into()))?;
        let mut opt = Self::new(kind, config, model)?;
        opt.step = step;
        for s in &mut opt.slots {
            let load = |suffix: &str| -> Result<&Record> {
                let r = find(records, &format!("optim.{}.{suffix}", s.name))?;
                if r.shape != s.velocity.shape() {
                    return Err(Error::Format(format!("optimizer state {} has shape {:?}", r.name, r.shape)));
                }
                Ok(r)
            };
            let v = load("velocity")?.as_f32()?.to_vec();
            let fs = match s.flip_state {
                Some(_) => Some(load("flip_state")?.as_f64()?.to_vec()),
                None => None,
            };
            let prev = match s.prev_sign {
                Some(_) => Some(load("prev_sign")?.as_f32()?.to_vec()),
                None => None,
            };
            s.velocity.data_mut().copy_from_slice(&v);
            s.flip_state = fs;
            if let (Some(dst), Some(src)) = (s.prev_sign.as_mut(), prev) {
                dst.data_mut().copy_from_slice(&src);
            }
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    fn cfg() -> OvswConfig {
        OvswConfig {
            base_lr: 1.0,
            total_steps: 100,
            ..OvswConfig::cifar()
        }
    }

    fn slot(kind: ParamKind, w: &Tensor) -> ParamSlot {
        ParamSlot::new("p", kind, w).unwrap()
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = OvswConfig { base_lr: 0.1, total_steps: 1000, ..OvswConfig::cifar() };
        assert_eq!(cosine_lr(0, &c), 0.1);
        assert_eq!(cosine_lr(1000, &c), 0.0);
        assert!((cosine_lr(500, &c) - 0.05).abs() < 1e-8);
        assert_eq!(cosine_lr(5000, &c), 0.0);
    }

    #[test]
    fn ags_lifts_small_gradient_to_lambda() {
        let w = Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap();
        let g = Tensor::new(vec![1, 2], vec![0.006, -0.008]).unwrap();
        let out = ags_scale(&g, &w, 0.04).unwrap();
        assert!((out.norm() - 0.04).abs() < 1e-7);
        let c = out.data()[0] / g.data()[0];
        assert!((out.data()[1] / g.data()[1] - c).abs() < 1e-5);
    }

    #[test]
    fn ags_leaves_large_gradient_bit_identical() {
        let w = Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap();
        let g = Tensor::new(vec![1, 2], vec![0.06, 0.08]).unwrap();
        assert_eq!(ags_scale(&g, &w, 0.04).unwrap(), g);
    }

    #[test]
    fn ags_degenerate_filters() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = Tensor::new(vec![2, 2], vec![0.0, 0.0, 1e-6, 0.0]).unwrap();
        assert_eq!(ags_scale(&g, &w, 0.04).unwrap(), g);
    }

    #[test]
    fn ags_is_per_filter() {
        let w = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let g = Tensor::new(vec![2, 1], vec![0.001, 0.5]).unwrap();
        let out = ags_scale(&g, &w, 0.04).unwrap();
        assert!((out.data()[0] - 0.04).abs() < 1e-8);
        assert_eq!(out.data()[1], 0.5);
    }

    #[test]
    fn flip_state_single_flip() {
        let prev = Tensor::from_vec(vec![1.0, -1.0]);
        let cur = Tensor::from_vec(vec![-1.0, -1.0]);
        let s = update_flip_state(&[0.0, 0.0], &prev, &cur, 0.99).unwrap();
        assert!((s[0] - 0.01).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn consecutive_flips_match_closed_form() {
        let m = 0.99f64;
        let mut s = vec![0.0];
        let mut sign = 1.0f32;
        for k in 1..=2000 {
            let prev = Tensor::from_vec(vec![sign]);
            sign = -sign;
            s = update_flip_state(&s, &prev, &Tensor::from_vec(vec![sign]), m).unwrap();
            assert!((s[0] - (1.0 - m.powi(k))).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn no_flips_keep_state_zero() {
        let a = Tensor::from_vec(vec![1.0, -1.0, 1.0]);
        let mut s = vec![0.0; 3];
        for _ in 0..100 {
            s = update_flip_state(&s, &a, &a, 0.99).unwrap();
        }
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sad_penalises_strictly_below_sigma() {
        let g = Tensor::from_vec(vec![0.0, 0.0, 0.5]);
        let w = Tensor::from_vec(vec![2.0, 2.0, 2.0]);
        let out = sad_decay(&g, &w, &[0.0, 9e-4, 0.0], 9e-4, 0.1).unwrap();
        assert!((out.data()[0] - 0.2).abs() < 1e-7);
        assert_eq!(out.data()[1], 0.0);
        assert!((out.data()[2] - 0.7).abs() < 1e-7);
        assert_eq!(sad_decay(&g, &w, &[0.0; 3], 0.0, 0.1).unwrap(), g);
    }

    #[test]
    fn scalar_ovsw_step_uses_lifted_gradient() {
        let mut w = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut slots = vec![slot(ParamKind::BinarizedWeight, &w)];
        let c = OvswConfig { momentum: 0.0, weight_decay: 0.0, sad_enabled: false, ..cfg() };
        ovsw_step(&mut [&mut w], &mut slots, &[Tensor::from_vec(vec![0.001])], 0, &c).unwrap();
        assert!((w.data()[0] - 0.96).abs() < 1e-6);
    }

    #[test]
    fn two_step_flip_script() {
        // Step 1 pushes w from +0.01 to negative; step 2 leaves it negative.
        let mut w = Tensor::from_vec(vec![0.01]);
        let mut slots = vec![slot(ParamKind::BinarizedWeight, &w)];
        let c = OvswConfig { momentum: 0.0, weight_decay: 0.0, ags_enabled: false, sad_enabled: false, ..cfg() };
        let mut seq = Vec::new();
        for g in [1.0, 0.0] {
            ovsw_step(&mut [&mut w], &mut slots, &[Tensor::from_vec(vec![g])], 0, &c).unwrap();
            seq.push(slots[0].flip_state.as_ref().unwrap()[0]);
        }
        assert!((seq[0] - 0.01).abs() < 1e-12);
        assert!((seq[1] - 0.0099).abs() < 1e-12);
    }

    #[test]
    fn alpha_gets_no_weight_decay() {
        let mut a = Tensor::from_vec(vec![1.0, 2.0]);
        let mut b = Tensor::from_vec(vec![1.0, 2.0]);
        let mut slots = vec![slot(ParamKind::ScaleAlpha, &a), slot(ParamKind::BnAffine, &b)];
        let c = OvswConfig { weight_decay: 0.1, ..cfg() };
        let z = Tensor::zeros(&[2]);
        ovsw_step(&mut [&mut a, &mut b], &mut slots, &[z.clone(), z], 0, &c).unwrap();
        assert_eq!(a.data(), &[1.0, 2.0]);
        assert!((b.data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn vanilla_zero_grad_zero_decay_is_noop() {
        let mut w = Tensor::from_vec(vec![0.3, -0.7]);
        let mut slots = vec![slot(ParamKind::FullPrecision, &w)];
        let c = OvswConfig { weight_decay: 0.0, ..cfg() };
        vanilla_step(&mut [&mut w], &mut slots, &[Tensor::zeros(&[2])], 3, &c).unwrap();
        assert_eq!(w.data(), &[0.3, -0.7]);
    }

    #[test]
    fn vanilla_pure_decay() {
        let mut w = Tensor::from_vec(vec![2.0]);
        let mut slots = vec![slot(ParamKind::BinarizedWeight, &w)];
        let c = OvswConfig { momentum: 0.0, weight_decay: 0.01, base_lr: 0.5, ..cfg() };
        vanilla_step(&mut [&mut w], &mut slots, &[Tensor::zeros(&[1])], 0, &c).unwrap();
        assert!((w.data()[0] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-7);
    }

    #[test]
    fn vanilla_matches_scalar_loop() {
        let mut rng = Rng::new(3);
        let n = 20;
        let w0: Vec<f32> = (0..n).map(|_| rng.standard_normal()).collect();
        let grads: Vec<Vec<f32>> = (0..4).map(|_| (0..n).map(|_| rng.standard_normal() * 0.1).collect()).collect();
        let c = cfg();
        let mut w = Tensor::from_vec(w0.clone());
        let mut slots = vec![slot(ParamKind::FullPrecision, &w)];
        for (t, g) in grads.iter().enumerate() {
            vanilla_step(&mut [&mut w], &mut slots, &[Tensor::from_vec(g.clone())], t as u64, &c).unwrap();
        }
        let (mut ow, mut ov) = (w0.iter().map(|&x| x as f64).collect::<Vec<_>>(), vec![0.0f64; n]);
        for (t, g) in grads.iter().enumerate() {
            let lr = c.base_lr * 0.5 * (1.0 + (PI * t as f64 / c.total_steps as f64).cos());
            for i in 0..n {
                ov[i] = c.momentum * ov[i] + (g[i] as f64 + c.weight_decay * ow[i]);
                ow[i] -= lr * ov[i];
            }
        }
        for i in 0..n {
            assert!((w.data()[i] as f64 - ow[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn zeroed_ovsw_is_bit_identical_to_vanilla() {
        let mut rng = Rng::new(11);
        let w0 = Tensor::new(vec![4, 9], (0..36).map(|_| rng.standard_normal() * 0.1).collect()).unwrap();
        let c = OvswConfig { ags_lambda: 0.0, sad_sigma: 0.0, sad_penalty: 0.0, ..cfg() };
        let (mut a, mut b) = (w0.clone(), w0.clone());
        let mut sa = vec![slot(ParamKind::BinarizedWeight, &a)];
        let mut sb = sa.clone();
        for t in 0..10 {
            let g = Tensor::new(vec![4, 9], (0..36).map(|_| rng.standard_normal() * 0.01).collect()).unwrap();
            ovsw_step(&mut [&mut a], &mut sa, std::slice::from_ref(&g), t, &c).unwrap();
            vanilla_step(&mut [&mut b], &mut sb, &[g], t, &c).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn lars_unit_local_rate_equals_vanilla() {
        // ‖W‖ = 5, ‖G‖ = 1, φ = 0, η = 0.2 → local rate exactly 1.
        let w0 = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let g = Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap();
        let c = OvswConfig { lars_eta: 0.2, weight_decay: 0.0, ..cfg() };
        let (mut a, mut b) = (w0.clone(), w0.clone());
        let mut sa = vec![slot(ParamKind::BinarizedWeight, &a)];
        let mut sb = sa.clone();
        lars_step(&mut [&mut a], &mut sa, std::slice::from_ref(&g), 0, &c).unwrap();
        vanilla_step(&mut [&mut b], &mut sb, &[g], 0, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lars_single_step_scales_vanilla_update() {
        let mut rng = Rng::new(2);
        let w0 = Tensor::new(vec![2, 5], (0..10).map(|_| rng.standard_normal()).collect()).unwrap();
        let g = Tensor::new(vec![2, 5], (0..10).map(|_| rng.standard_normal() * 0.1).collect()).unwrap();
        let c = OvswConfig { momentum: 0.0, ..cfg() };
        let local = c.lars_eta * w0.norm() / (g.norm() + c.weight_decay * w0.norm());
        let (mut a, mut b) = (w0.clone(), w0.clone());
        let mut sa = vec![slot(ParamKind::BinarizedWeight, &a)];
        let mut sb = sa.clone();
        lars_step(&mut [&mut a], &mut sa, std::slice::from_ref(&g), 0, &c).unwrap();
        vanilla_step(&mut [&mut b], &mut sb, &[g], 0, &c).unwrap();
        for i in 0..10 {
            let da = (a.data()[i] - w0.data()[i]) as f64;
            let db = (b.data()[i] - w0.data()[i]) as f64;
            assert!((da - local * db).abs() < 1e-6, "{da} vs {}", local * db);
        }
    }

    #[test]
    fn lars_skips_degenerate_layer() {
        let mut w = Tensor::zeros(&[2, 2]);
        let mut s = vec![slot(ParamKind::BinarizedWeight, &w)];
        lars_step(&mut [&mut w], &mut s, &[Tensor::zeros(&[2, 2])], 0, &cfg()).unwrap();
        assert_eq!(w, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn lars_momentum_buffer_differs_from_ovsw() {
        // Tiny gradient: OvSW lifts it before it enters V, LARS stores it raw.
        // With η chosen so LARS' first step matches OvSW's, the buffers still differ.
        let w0 = Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap();
        let g = Tensor::new(vec![1, 2], vec![0.006, 0.008]).unwrap();
        let base = OvswConfig { weight_decay: 0.0, sad_enabled: false, ..cfg() };
        // OvSW step 1 moves by λ‖W‖/‖G‖·G = 4G; LARS moves by η‖W‖/‖G‖·G.
        let c = OvswConfig { lars_eta: 0.04, ..base };
        let (mut a, mut b) = (w0.clone(), w0.clone());
        let mut sa = vec![slot(ParamKind::BinarizedWeight, &a)];
        let mut sb = sa.clone();
        ovsw_step(&mut [&mut a], &mut sa, std::slice::from_ref(&g), 0, &c).unwrap();
        lars_step(&mut [&mut b], &mut sb, std::slice::from_ref(&g), 0, &c).unwrap();
        for i in 0..2 {
            assert!((a.data()[i] - b.data()[i]).abs() < 1e-7);
        }
        let g2 = Tensor::new(vec![1, 2], vec![0.003, -0.004]).unwrap();
        ovsw_step(&mut [&mut a], &mut sa, std::slice::from_ref(&g2), 1, &c).unwrap();
        lars_step(&mut [&mut b], &mut sb, &[g2], 1, &c).unwrap();
        let dv = sa[0].velocity.sub(&sb[0].velocity).unwrap().max_abs();
        assert!(dv > 1e-2, "velocity gap {dv}");
        // LARS' buffer holds the raw gradients: V = 0.9·g1 + g2.
        assert!((sb[0].velocity.data()[0] - (0.9 * 0.006 + 0.003)).abs() < 1e-8);
    }

    #[test]
    fn rejects_nonfinite_and_mismatched() {
        let mut w = Tensor::zeros(&[2]);
        let mut s = vec![slot(ParamKind::FullPrecision, &w)];
        let bad = Tensor::from_vec(vec![f32::NAN, 0.0]);
        assert!(matches!(
            vanilla_step(&mut [&mut w], &mut s, &[bad], 0, &cfg()),
            Err(Error::NonFinite { .. })
        ));
        assert!(vanilla_step(&mut [&mut w], &mut s, &[Tensor::zeros(&[3])], 0, &cfg()).is_err());
        assert!(vanilla_step(&mut [&mut w], &mut s, &[], 0, &cfg()).is_err());
    }

    #[test]
    fn config_validation_and_presets() {
        assert!(OvswConfig::cifar().validate().is_ok());
        assert_eq!(OvswConfig::imagenet().ags_lambda, 0.02);
        assert_eq!(OvswConfig::imagenet().sad_sigma, 2e-5);
        assert!(OvswConfig { ema_momentum: 1.0, ..OvswConfig::cifar() }.validate().is_err());
        assert!(OvswConfig { base_lr: 0.0, ..OvswConfig::cifar() }.validate().is_err());
        assert!(OvswConfig { ags_lambda: -1.0, ..OvswConfig::cifar() }.validate().is_err());
        let parsed: OvswConfig = serde_json::from_str(r#"{"ags_lambda": 0.1}"#).unwrap();
        assert_eq!(parsed.ags_lambda, 0.1);
        assert_eq!(parsed.sad_sigma, 9e-4);
        assert_eq!("OvSW".parse::<OptimizerKind>().unwrap(), OptimizerKind::Ovsw);
    }

    fn small_tensor(len: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-10f32..10.0, len)
    }

    proptest! {
        #[test]
        fn ags_lower_bound_and_direction(
            w in small_tensor(12), g in small_tensor(12), scale in -8i32..2, lambda in 0.0f64..0.5
        ) {
            let w = Tensor::new(vec![3, 4], w).unwrap();
            let g = Tensor::new(vec![3, 4], g).unwrap().scale(10f32.powi(scale));
            let out = ags_scale(&g, &w, lambda).unwrap();
            for k in 0..3 {
                let (gk, wk, ok) = (&g.data()[k*4..k*4+4], &w.data()[k*4..k*4+4], &out.data()[k*4..k*4+4]);
                let n = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                if n(gk) > 0.0 && n(wk) > 0.0 {
                    prop_assert!(n(ok) / n(wk) >= lambda * (1.0 - 1e-5));
                    let c = n(ok) / n(gk);
                    prop_assert!(c >= 1.0 - 1e-6);
                    for i in 0..4 {
                        prop_assert!((ok[i] as f64 - c * gk[i] as f64).abs() <= 1e-5 * (c * gk[i].abs() as f64).max(1e-30));
                    }
                }
            }
        }

        #[test]
        fn flip_state_stays_in_unit_interval(
            flips in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 6), 1..60),
            m in 0.0f64..0.9999
        ) {
            let mut s = vec![0.0; 6];
            let mut signs = vec![1.0f32; 6];
            let mut oracle = vec![0.0f64; 6];
            for step in &flips {
                let prev = Tensor::from_vec(signs.clone());
                for (x, &f) in signs.iter_mut().zip(step) {
                    if f { *x = -*x; }
                }
                s = update_flip_state(&s, &prev, &Tensor::from_vec(signs.clone()), m).unwrap();
                for (o, &f) in oracle.iter_mut().zip(step) {
                    *o = m * *o + (1.0 - m) * f as u8 as f64;
                }
                for (a, b) in s.iter().zip(&oracle) {
                    prop_assert!((0.0..=1.0).contains(a));
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
